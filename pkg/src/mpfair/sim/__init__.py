from .cells import DataCell, RMCell, SourceState, source_on_brm, source_tick
from .checks import conservation_check, interval_rate_check, per_source_state
from .engine import SimulationResult, Simulator, run_simulation, write_trace
from .merge import (BITMARK, TURNAROUND, MergePoint, MergeQueue, count_interleavings,
                    merge_dequeue, merge_enqueue, merge_on_brm, merge_on_frm)
from .probe import chain_scenario, feedback_delay_probe, probe_csv
from .switch import VC_MERGE, VP_MERGE, SwitchRateState, switch_stamp_er
