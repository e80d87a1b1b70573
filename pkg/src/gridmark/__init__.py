"""Watermarked control-loop simulator and spoofing-attack test bench.

A seeded discrete-time grid model injects a private noise signature at the
control input; residual detectors check sensor traffic for it; a model-based
attacker extracts and re-embeds the signature around fake readings. The
harness runs calibrated Monte Carlo campaigns over the whole pipeline.
"""
from .errors import (AuthenticatedChannelError, CalibrationError,
                     DegenerateBaselineError, NonInvertibleError,
                     ZeroTemplateError)
from .signals import SignalTrace, as_array
from .model import (ChannelModel, Decomposition, GridModel, SeedSet, TraceBundle,
                    closed_loop_impulse_response, controller_law, decompose,
                    default_model, invert_sensor_map, plain_channels,
                    scalar_model, sensor_output, simulate, step)
from .watermark import (WatermarkKey, expected_component, generate_watermark,
                        watermark_image_rms, watermark_matrix)
from .detector import (BlockStatistics, DetectorConfig, DetectorReport,
                       Thresholds, WatermarkDetector, block_scale,
                       calibrate_thresholds, compute_block_statistics,
                       estimate_watermark_gain, judge, spectral_band_power,
                       watermark_band_variance)
from .adversary import (AttackPlan, DigitalTwinInterceptor, FakeTrajectory,
                        RegimeReport, ReplayInterceptor, SubstitutionInterceptor,
                        TwinState, create_twin, extract_watermark, naive_attack,
                        nonlinear_firstorder_attack, regime_check,
                        run_digital_twin_attack, select_gain, synthesize_fake,
                        trailing_rms, twin_predict)
from .harness import (MetricsSummary, RunResult, ScenarioConfig,
                      calibrate_scenario, canonical_config_text, derive_seeds,
                      derive_watermark_key, emit_plot_data, export_results,
                      load_scenario, load_thresholds_for, monte_carlo,
                      parse_config_text, build_scenario, read_results_csv,
                      run_many, run_scenario, save_thresholds, scenario_digest,
                      simulate_run, summarize, wilson_interval)
from .presets import load_preset, preset_names, preset_text

__version__ = "0.1.0"
