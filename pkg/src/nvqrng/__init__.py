"""Single-photon random number generation: simulation, correlation, entropy and extraction."""

from .apparatus import ApparatusParams, ParamSigmas, analytic_click_rates
from .emitter import PowerModel, ThreeLevelRates, fluorescence_rates, g2_analytic, rates_from_power, steady_state
from .entropy import EntropyReport, ProbTable, probs_from_params, sigma_multiplier
from .extract import ExtractionPlan, HashSeed, plan_extraction
from .g2 import REFERENCE_G2, G2Model, classical_crossing, g2_integral
from .tags import RawBits, TagStream, TimeTag

__version__ = "0.1.0"
