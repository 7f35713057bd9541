"""Shared experiment defaults.

Embedding dimension, margin and loss weight are the full-scale settings; the
optimizer values are desk-scale choices and are always overridable from the
config file.
"""

EMBED_DIM = 200
BASE_MARGIN = 0.2
LAMBDA_S = 0.8

LEARNING_RATE = 0.05
MOMENTUM = 0.9
BATCH_SIZE = 32
CANDIDATE_POOL = 16

# retrieval cut-offs
K_FINE = 40
K_COARSE = 100
K_ATTRIBUTE = 50

STRUCTURES = ("flat", "hierarchy", "attributes")
SAMPLER_MODES = ("uniform", "semi-hard")
STRATEGIES = ("joint", "sequential")

CHECKPOINT_NAME = "checkpoint.bin"
EPOCH_LOG_NAME = "epoch_log.jsonl"
TIMINGS_NAME = "timings.jsonl"
DIVERGED_NAME = "diverged_batch.json"
META_NAME = "meta.json"
RECORDS_NAME = "records.jsonl"
REPORT_NAME = "report.json"
PRECISION_CSV_NAME = "precision.csv"
PCA_CSV_NAME = "pca.csv"
