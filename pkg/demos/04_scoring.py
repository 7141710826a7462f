"""
Scoring answers
===============

DocVQA and WTQ use ANLS, TabFact uses exact match. The final number averages
within each dataset first and then across datasets.
"""

from fedocvqa.metrics import EvalExample, anls_score, levenshtein, two_step_average

print(levenshtein("kitten", "sitting"))
print(anls_score("building", ["buildings"]))
# similarity below 0.5 counts as zero
print(anls_score("red", ["blue"]))

examples = [
    EvalExample("DocVQA", "building", ("buildings",)),
    EvalExample("DocVQA", "Paris", ("paris",)),
    EvalExample("TabFact", "yes", ("no",)),
]
# 1 TabFact example against 2 DocVQA ones, yet both datasets weigh the same
report = two_step_average(examples)
print(report.per_dataset, report.final_x100)
