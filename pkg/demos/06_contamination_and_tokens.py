"""
Contamination retrieval and token asymmetry
===========================================

Two closing diagnostics: (1) nearest-neighbor retrieval of training charts
for every test chart under multiple encoders, averaging per-encoder cosine
scores, to rule out leakage; (2) the token-composition report showing how
plotting-code supervision is dominated by boilerplate while the visual
attribute values that must be read off the image are a sliver.
"""

from chartrl.analytics import contamination_report, token_asymmetry_report
from chartrl.embedding import DeterministicStubEncoder
from chartrl.model import ChartSample, Provenance
from chartrl.toyloop import make_bar_chart_png

# --- contamination check ----------------------------------------------------
train = [
    ChartSample(f"train-{i}", make_bar_chart_png(values), Provenance.SOURCE_DATASET)
    for i, values in enumerate([(40, 55, 80, 65), (10, 90, 30, 70), (5, 5, 90, 5)])
]
# test set contains one exact duplicate of a training chart
test = [
    ChartSample("test-dup", make_bar_chart_png((40, 55, 80, 65)), Provenance.SOURCE_DATASET),
    ChartSample("test-new", make_bar_chart_png((33, 44, 55, 66)), Provenance.SOURCE_DATASET),
]

report = contamination_report(test, train, encoders=[DeterministicStubEncoder()], top_k=2)
print("test_id    best_train   avg_score")
for row in report.rows:
    print(f"{row.test_id:<9}  {row.best_train_id:<11}  {row.best_score:.6f}")
print("best-score percentiles:", report.percentiles)
print("(an exact duplicate surfaces with score 1.0)\n")

# --- token asymmetry ---------------------------------------------------------
corpus = [
    "import matplotlib.pyplot as plt\n"
    "values = [3, 1, 4, 1, 5]\n"
    'plt.plot(values, color="tab:blue", linewidth=2.0)\n'
    'plt.title("Sample trend")\n'
    'plt.savefig("out.png")\n',
    "import matplotlib.pyplot as plt\n"
    "data = [9, 2, 6]\n"
    'plt.bar(range(3), data, color="red", alpha=0.8)\n'
    'plt.savefig("bars.png")\n',
]
token_report = token_asymmetry_report(corpus)
print("token shares by supervision category:")
for category, share in token_report.shares.items():
    print(f"  {category:<16} {share:6.1%}")
print(f"visual attribute VALUES (the part only the image can supply): "
      f"{token_report.attribute_value_share:.1%}")
print("top-3 value coverage per attribute:",
      {k: v for k, v in token_report.top3_coverage.items() if v is not None})
