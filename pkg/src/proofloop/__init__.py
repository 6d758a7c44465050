"""Tool-integrated proving rollout harness.

A generator interleaves reasoning with code sketches; each completed
sketch is verified in a sandboxed broker, the checker's feedback is
injected back into the context, and only the final answer's verification
sets the binary reward. On top of that loop: loss masks that exclude
injected feedback, group-normalized advantages with a clipped surrogate
objective for an external trainer, dynamic prompt curation, and
evaluation metrics.
"""

from .backends import (
    BackendCrashed,
    CheckTimeout,
    MockBackend,
    MockRule,
    ScriptedBackend,
    SubprocessReplBackend,
    VerifierBackend,
)
from .broker import (
    Broker,
    BrokerDown,
    BrokerStats,
    DeadlineExceeded,
    JobResult,
    QueueFull,
    RecycleDecision,
    SketchJob,
    UnknownJob,
    WorkerState,
    WorkerStatus,
    recycle_policy_tick,
)
from .clock import Clock, SystemClock, VirtualClock
from .curation import (
    PromptRecord,
    PromptTracker,
    eligible_prompts,
    has_feedback_analysis,
    select_rlsft,
)
from .grpo import (
    AdvantageSet,
    EmptyGroup,
    ShapeMismatch,
    advantages,
    clipped_term,
    clipped_term_logratio_grad,
    objective,
    objective_logratio_grad,
)
from .metrics import (
    EvalRun,
    TrialOutcome,
    interaction_histogram,
    length_scaling,
    pass_at_1,
    render_report,
)
from .protocol import (
    ArityMismatch,
    EventKind,
    LossMask,
    MalformedNesting,
    NoFinalAnswer,
    ParseEvent,
    ProtocolError,
    Segment,
    SegmentKind,
    StopReason,
    StreamParser,
    Trajectory,
    assemble,
    build_loss_mask,
    extract_final_answer,
    flatten,
    from_jsonl_line,
    inject_feedback,
    parse_transcript,
    to_jsonl_line,
    whitespace_tokens,
)
from .rollout import (
    EVAL_MAX_TOTAL_TOKENS,
    Generator,
    GeneratorError,
    GeneratorStop,
    GroupRewards,
    RolloutLimits,
    RolloutTrace,
    ScriptedGenerator,
    TranscriptGenerator,
    run_group,
    run_rollout,
)
from .server import BrokerService
from .verdict import (
    ParseError,
    ReplMessage,
    Severity,
    SorryRecord,
    VerdictStatus,
    VerifierVerdict,
    classify,
    classify_raw,
    parse_repl_output,
    reward,
)

__version__ = "0.1.0"
