"""
Non-IID client partitions
=========================

Every client holds documents from exactly one source dataset. A scenario
fixes how many clients each dataset is split into.
"""

from collections import Counter

from fedocvqa.partition import manifest_corpus, partition, scenario, synthetic_manifest, write_manifest

# A manifest lists (dataset, doc_id, question_count). The synthetic one has
# the full train-split sizes.
records = synthetic_manifest()
print(write_manifest(records[:3]), end="")
corpus = manifest_corpus(records)
print({name: len(docs) for name, docs in corpus.items()})

for k in (3, 10, 30):
    plans = partition(scenario(k, corpus), seed=0)
    sizes = {}
    for p in plans:
        sizes.setdefault(p.dataset, []).append(p.n_documents)
    print(f"K={k}:", {name: dict(Counter(v)) for name, v in sizes.items()})

# n_k defaults to the number of questions on the client's documents.
plans = partition(scenario(10, corpus), seed=0)
print("questions per client:", [p.n_k() for p in plans])
