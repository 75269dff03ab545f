"""ROUGE-N and ROUGE-L on short examples."""

from topic_convs2s.rouge import corpus_scores, format_table, lcs_length, rouge_l, rouge_n, tokenize

hyp = tokenize("the cat sat on the mat")
ref = tokenize("The cat was on the mat")
print(hyp, ref)
print("lcs:", lcs_length(hyp, ref))
print("rouge-1", rouge_n(hyp, [ref], 1).as_tuple())
print("rouge-2", rouge_n(hyp, [ref], 2).as_tuple())
print("rouge-l", rouge_l(hyp, [ref]).as_tuple())

# with several references the best F is kept
print("two refs", rouge_l(hyp, [ref, hyp]).as_tuple())

hyps = ["a b d", "x y"]
refs = [["a b c", "x y"]]  # one list per reference set
print(format_table(corpus_scores(hyps, refs)))
