"""Topic-aware convolutional sequence-to-sequence summarisation on numpy."""

from .data import BOS, EOS, PAD, UNK, Vocabulary, build_vocab, load_corpus, make_batches, toy_corpus
from .decode import Hypothesis, beam_decode, decode, greedy_decode, sample_decode
from .lda import TopicModel, TopicVocabulary, fit_lda, topic_embedding_matrix, topic_vocabulary, universal_words
from .model import ModelConfig, TopicConvS2S, output_distribution
from .rouge import RougeScore, corpus_scores, rouge_l, rouge_n
from .tensor import Tensor, check_gradients, no_grad
from .train import STOP, TrainConfig, finetune_scst, lr_schedule, ml_loss, mixed_loss, nesterov_step, rl_loss, train_ml

__version__ = "0.1.0"
