"""Self-attentive Hawkes process toolkit."""

from ._core import (  # noqa: F401
    DataError,
    Dataset,
    Event,
    HawkesParams,
    HawkesSpec,
    IntensityState,
    Model,
    NumericError,
    SAHPConfig,
    Sequence,
    TrainConfig,
    benchmark_two_type_spec,
    dataset_stats,
    hp_compensator,
    hp_fit,
    hp_intensity,
    hp_loglik,
    hp_windowed_nll,
    intensity_at,
    intensity_trace,
    load_dataset,
    load_hawkes_spec,
    qq_data,
    save_dataset,
    save_hawkes_spec,
    simulate_thinning,
    split_dataset,
    train,
    true_intensity,
    true_windowed_nll,
    validate_sequence,
)

__version__ = "0.1.0"
