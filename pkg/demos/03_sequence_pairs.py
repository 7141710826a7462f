"""
Masked sequence pairs for self-pretraining
==========================================

Three objectives turn a document (tokens plus boxes) into an input/target
pair: text modeling hides words but shows where they are, layout modeling
shows words and asks where they are, text-layout modeling hides both.
"""

import numpy as np

from fedocvqa.fsp import Discretizer, DocumentExample, MaskPlan, build_pair, compile_example, reconstruct

doc = DocumentExample(
    tokens=("Revenue", "2019", "total"),
    boxes=((0.10, 0.20, 0.30, 0.25), (0.40, 0.20, 0.50, 0.25), (0.10, 0.30, 0.20, 0.35)),
)
disc = Discretizer(vocab_size=100)

# Mask the first token under each objective.
for obj in ("TM", "LM", "TLM"):
    pair = build_pair(doc, MaskPlan(obj, (0,), 1.0, 100), disc)
    print(f"{obj:3s} input : {' '.join(pair.input)}")
    print(f"    target: {' '.join(pair.target)}")

# Random masks use the default rates; the pair can always be parsed back.
rng = np.random.default_rng(0)
pair = compile_example(doc, "TLM", rng, disc, masking={"TLM": (0.6, 100)})
back = reconstruct(pair, "TLM", disc)
print("round trip tokens:", back.tokens == doc.tokens)
print("masked boxes come back as bin centers:", back.boxes)
