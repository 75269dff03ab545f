"""Run one forward pass and look at the pieces of the topic-aware decoder."""

import numpy as np

from topic_convs2s import ModelConfig, TopicConvS2S, no_grad
from topic_convs2s.data import BOS

np.set_printoptions(precision=3, suppress=True)

config = ModelConfig(vocab_size=12, d=8, kernel_width=3, word_layers=2, topic_layers=2,
                     max_source_len=10, max_target_len=6, init_scale=0.5)
topic_ids = [5, 6, 7]
net = TopicConvS2S.create(config, topic_ids, seed=0)
print("parameters:", net.params.num_parameters())
print("topic word mask:", net.topic_word_mask.astype(int))

source = np.array([4, 5, 9, 6, 10])
prefix = np.array([BOS, 8, 5])

with no_grad():
    enc = net.encode(source)
    h, h_topic = net.decode_states(prefix, enc)
    lp = net.log_probs(h, h_topic)

print("decoder states", h.shape, "topic states", h_topic.shape)
print("log-probs", lp.shape)
probs = np.exp(lp.data[0])
print("rows sum to", probs.sum(axis=-1))

print("last step, top 3 tokens:", np.argsort(-probs[-1])[:3])

# causality: changing a later prefix token leaves earlier steps alone
other = prefix.copy()
other[-1] = 11
with no_grad():
    lp2 = net.forward(source, other)
print("earlier steps unchanged:", np.allclose(lp.data[0, :-1], lp2.data[0, :-1]))
