"""Explainable anomaly detection for wearable-derived daily features.

Pipeline: rule-based labeling of normal periods and symptom-worsening
episodes from biweekly PHQ-8/GAD-7 scores, daily feature extraction from
minute-level streams, an LSTM autoencoder trained on normal 7-day
windows, percentile-threshold detection, event-adjusted evaluation, and
Shapley-value explanations; plus a seeded synthetic cohort generator
with recoverable ground truth.
"""

from .cohort import (Assessment, Cohort, CohortFormatError, CovidEvent,
                     MinuteRecord, MinuteSeries, Participant, ValidationReport,
                     load_cohort, parse_cohort, serialize_cohort, validate_cohort,
                     write_cohort)
from .detector import Detection, detect, select_threshold
from .evaluation import (AdjustedPRF, EpisodeOutcome, adjusted_prf,
                         aligned_averages, breakdown, episode_outcomes)
from .explain import (AttributionMatrix, episode_feature_ranks,
                      rank_distribution_test, shapley_attributions,
                      time_dynamic_attribution)
from .features import (DailyFeatures, NormalizationConstants, Window,
                       daily_features, day_quality, impute_linear, make_windows,
                       normalize_participant, resting_heart_rate, sleep_duration,
                       total_steps)
from .labeling import (CovidExclusion, Episode, NormalPeriod, covid_exclusions,
                       day_labels, find_episodes, find_normal_periods,
                       label_participant)
from .lstm_ae import (LstmAutoencoder, TrainConfig, TrainReport, backprop_grads,
                      forward_reconstruct, gradient_check, init_model,
                      load_model, reconstruction_error, save_model, train)
from .pipeline import PipelineConfig, run_stage
from .stats import chi_square_independence, chi_square_sf
from .synth import EffectProfile, GroundTruth, ScenarioConfig, generate_cohort

__version__ = "0.1.0"
