from .edf import Annotation, EdfParseError, EdfRecording, EdfSignal, parse_edf, read_edf, write_edf
from .preprocessing import (
    FoldPlan,
    GridNormalizer,
    Trial,
    bandpass,
    extract_trials,
    load_cue_table,
    load_layout,
    make_folds,
    project_grid,
    stack_trials,
)
from .synth import SynthSpec, synth_dataset
