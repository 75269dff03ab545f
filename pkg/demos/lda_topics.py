"""Fit collapsed-Gibbs LDA on the planted toy corpus and inspect the topics."""

import warnings

import numpy as np

from topic_convs2s import data, lda

tc = data.toy_corpus(seed=0, num_pairs=100)
docs = tc.sources()

# words in more than 40% of documents carry no topic signal
universal = lda.universal_words(docs)
print("universal words:", sorted(universal))
docs = [[w for w in d if w not in universal] for d in docs]

model = lda.fit_lda(docs, num_topics=2, iterations=200, seed=0)
print("topic_word_counts shape:", model.topic_word_counts.shape)
print("doc_topic_counts shape: ", model.doc_topic_counts.shape)
print("purity vs planted labels:", lda.topic_purity(model.dominant_topics(), tc.labels))

with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # fewer than top_n words per topic on a toy corpus
    tv = lda.topic_vocabulary(model, top_n=5, universal=universal)
for k, words in enumerate(tv.per_topic_top_words):
    print(f"topic {k}:", " ".join(words))

emb = lda.topic_embedding_matrix(model, tv, d=8)
print("topic embedding", emb.shape, "mean %.2e var %.4f" % (emb.mean(), emb.var()))
np.set_printoptions(precision=3, suppress=True)
print(emb[:3])
