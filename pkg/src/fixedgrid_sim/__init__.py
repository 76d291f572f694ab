"""Physical-layer simulator for 50 GHz fixed-grid coherent DWDM links."""

from .core import (
    BITS_PER_SYMBOL,
    CODINGS,
    MODULATION_FORMATS,
    OSNR_REF_BANDWIDTH_HZ,
    AlignmentError,
    BitStream,
    ConfigError,
    ConvergenceError,
    DualPolWaveform,
    LinkConfig,
    OsnrReport,
    SymbolStream,
    beta2_from_d,
    dbm_to_mw,
    mw_to_dbm,
    rng_for,
    validate_config,
)
from .txchain import (
    ConstellationTable,
    LaserSpec,
    TransmitResult,
    constellation,
    encode_differential,
    generate_bits,
    iq_modulate,
    laser_field,
    map_gray,
    pdm_combine,
    pulse_shape,
    serial_to_parallel,
    transmit,
)
from .grid import BandSignal, GridChannel, channel_frequency, demux, mux
from .channel import (
    FiberState,
    SpanPlan,
    edfa_amplify,
    fiber_propagate,
    measure_osnr,
    run_link,
    set_osnr,
)
from .frontend import ElectricalQuad, adc_sample, hybrid_and_detect
from .dsp import (
    DspConfig,
    DspResult,
    StageDump,
    cd_compensate,
    clock_recover,
    cma_equalize,
    cpe_viterbi_viterbi,
    decide_decode,
    foc,
    run_dsp_chain,
)
from .metrics import (
    BerReport,
    CapacityReport,
    SpectrumReport,
    analyze_spectrum,
    count_ber,
    evm,
    spectral_efficiency,
    total_capacity,
)
from .sweep import (
    RunOptions,
    SweepRecord,
    SweepResult,
    SweepSpec,
    emit_outputs,
    run_capacity_table,
    run_experiment,
    run_osnr_sweep,
    run_reach_sweep,
)

__version__ = "0.1.0"
