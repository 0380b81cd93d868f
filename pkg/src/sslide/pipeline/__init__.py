from .config import ExperimentConfig, desk_preset, full_preset, paper_arrays, split_counts
from .dataset import Dataset, Manifest, generate_dataset, split_datapoints, split_records
from .experiment import run_baseline, run_eval, run_training
