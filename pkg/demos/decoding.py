"""Compare greedy, beam and sampled outputs on a small random model."""

import numpy as np

from topic_convs2s import ModelConfig, TopicConvS2S, beam_decode, greedy_decode, sample_decode

config = ModelConfig(vocab_size=10, d=8, word_layers=2, topic_layers=2,
                     max_source_len=8, max_target_len=8, init_scale=1.0)
net = TopicConvS2S.create(config, [4, 5, 6], seed=3)
source = [4, 7, 5, 9]

g = greedy_decode(net, source, max_len=5)
print("greedy  ", g.content(), "score %.4f" % g.score)
for k in (1, 2, 5):
    b = beam_decode(net, source, beam_size=k, max_len=5)
    print(f"beam k={k}", b.content(), "score %.4f" % b.score)

for seed in range(3):
    s = sample_decode(net, source, max_len=5, seed=seed)
    print(f"sample {seed}", s.content(), "score %.4f" % s.score)

# wider beams never score below greedy
print("beam >= greedy:", beam_decode(net, source, 4, 5).score >= g.score)
