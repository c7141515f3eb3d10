"""Distributed Bell-test harness: local hidden-variable strategies run under a
locality-enforcing referee, with Fourier and martingale analyses showing
that none of them reproduces the full-amplitude singlet correlation."""

from .fourier import (CorrelationFunction, FunctionTable, Spectrum, SpectrumReport,
                      autocorrelation_direct, autocorrelation_spectral, cosine_fit, cross_spectrum,
                      dft, expected_correlation, impossibility_certificate)
from .harness import RunConfig, RunLog, generate_settings, replay_verify, run_in_process
from .model import (HiddenVariable, LocalStrategy, SettingGrid, StrategyPair, TrialRecord,
                    get_strategy, hidden_stream, sign_outcome, singlet_sample)
from .prng import prng_next
from .stats import (ChshCorrelations, ProbabilityTable, TestVerdict, bell_test, binomial_tail,
                    boole_check, chsh_score, estimate_correlations, fine_check, success_count)

__version__ = "0.1.0"
