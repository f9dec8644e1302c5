class Key:
    """ Define dictionary keys used throughout the project."""

    # Begin: Keys in options (ddsd command) ====================================

    SUBCOMMAND = "subcommand"
    CONFIG = "config"
    SEED = "seed"
    OUT = "out"
    BASE = "base"
    DATA = "data"
    MODEL = "model"
    INPUT = "input"
    WORKERS = "workers"

    TRAIN = "train"
    EVAL = "eval"
    PROVIDER = "provider"
    EVAL_DIRECTED = "eval_directed_fraction"
    AMBIGUITY = "ambiguity_fraction"
    TRIGGER = "trigger_marker"
    FRAME_STORAGE = "frame_storage"

    CORPUS = "corpus_size"
    EPOCHS = "epochs"
    BATCH = "batch_size"
    LRN_RATE = "learning_rate"
    GLB_NORM_CLIP = "clip_norm"
    LOSS_MASK = "loss_mask"

    MODALITIES = "modalities"
    NO_LORA = "no_lora"
    TRAIN_SIZE = "train_size"
    TARGETS = "targets"
    RANK = "rank"
    ALPHA = "alpha"

    # End: Keys in options (ddsd command) ======================================

    # Begin: Artifact file names ===============================================

    FILE_CONFIG = "effective_config.cfg"
    FILE_BASE = "base.ckpt"
    FILE_MODEL = "model.ckpt"
    FILE_TRAIN_REPORT = "train_report.json"
    FILE_LOSS = "loss.png"
    FILE_SCORES = "scores.jsonl"
    FILE_DET = "det.txt"
    FILE_DET_PLOT = "det.png"
    FILE_EVAL = "eval.json"
    FILE_REPORT = "report.jsonl"
    FILE_TABLE = "report.txt"
    FILE_CHECKS = "checks.json"
    FILE_SIZE_SWEEP = "size_sweep.png"

    # End: Artifact file names =================================================
