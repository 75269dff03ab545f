"""Topic model, ML training, SCST fine-tuning and decoding on the toy corpus.

Takes around ten seconds.
"""

import logging
import warnings

from topic_convs2s import data, lda
from topic_convs2s.model import ModelConfig, TopicConvS2S
from topic_convs2s.train import TrainConfig, exact_match_rate, finetune_scst, mean_rouge_l, train_ml
from topic_convs2s.decode import beam_decode

logging.basicConfig(level=logging.INFO, format="%(message)s")
warnings.simplefilter("ignore")

tc = data.toy_corpus(seed=0, num_pairs=50)
docs = tc.sources()
universal = lda.universal_words(docs)
topics = lda.fit_lda([[w for w in d if w not in universal] for d in docs], 2, iterations=200)
tv = lda.topic_vocabulary(topics, 200, universal)

vocab = data.build_vocab(tc.pairs)
ids = tv.ids(vocab)
config = ModelConfig(len(vocab), d=32, word_layers=2, topic_layers=2, max_source_len=16, max_target_len=8)
net = TopicConvS2S.create(config, ids, lda.topic_embedding_matrix(topics, tv, 32))

result = train_ml(net, vocab, tc.pairs, TrainConfig(max_epochs=200, patience=10, target_loss=0.05))
print("stopped:", result.stop_reason, "after", len(result.logs), "epochs")
print("exact match %.2f  rouge-l %.4f" % (exact_match_rate(net, vocab, tc.pairs), mean_rouge_l(net, vocab, tc.pairs)))

finetune_scst(net, vocab, tc.pairs, TrainConfig(rl_epochs=2))
print("after scst rouge-l %.4f" % mean_rouge_l(net, vocab, tc.pairs))

for src, tgt in tc.pairs[:3]:
    out = beam_decode(net, vocab.encode(src))
    print(" ".join(src), "=>", " ".join(vocab.decode(out.tokens)), "| ref:", " ".join(tgt))
