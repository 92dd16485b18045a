"""Random search over WGAN configurations with an asynchronous
successive-halving (ASHA) scheduler.

The scheduler owns an append-only NDJSON journal and per-rung score boards;
workers claim one task at a time (promote an eligible trial to the next rung,
else start a fresh sample) and report a score. Promotion uses claim-time
semantics: a trial moves up only while its score sits in the top 1/eta of the
scores completed at its rung. Scores are the direct W1 at the trial's current
budget; failed trials score +inf and never promote, but never block others.

Journals contain no timestamps, so a single-worker run with a fixed seed is
byte-reproducible; multi-worker runs reproduce the set of trials but not the
promotion timing.
"""

import json
import math
import os
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng
from .wgan import WganConfig


# -- search space --------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    """Categorical/log-uniform ranges for every searched WganConfig field."""

    widths: tuple = (64, 128, 256, 512)
    depths: tuple = (2, 3, 4, 5)
    activations: tuple = ("relu", "leaky_relu", "tanh")
    init_schemes: tuple = ("uniform", "xavier")
    priors: tuple = ("gaussian", "uniform")
    prior_dims: tuple = (1, 2, 4, 8, 16)
    lipschitz: tuple = ("spectral_norm", "gradient_penalty")
    gp_weight_range: tuple = (0.1, 100.0)        # log-uniform
    n_critic: tuple = (1, 5, 25, 100)
    lr_range: tuple = (1e-5, 1e-2)               # log-uniform
    beta1s: tuple = (0.0, 0.5, 0.9)
    beta2s: tuple = (0.9, 0.99, 0.999)
    weight_decays: tuple = (0.0, 1e-4, 1e-2)
    dropouts: tuple = (0.0, 0.1, 0.3)
    batch_norms: tuple = (False, True)
    residuals: tuple = (False, True)
    cyclic_periods: tuple = (None, 500, 2000)    # None disables cyclic LR
    batch_size: int = 256
    eval_every: int = 500
    eval_samples: int = 100_000

    def to_dict(self):
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for k, v in doc.items():
            if isinstance(v, list):
                doc[k] = tuple(v)
        return cls(**doc)


def _choice(rng, options):
    return options[int(rng.integers(0, len(options)))]


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def sample_config(space, rng):
    """One independent draw from the space; always a valid WganConfig."""
    lipschitz = _choice(rng, space.lipschitz)
    lr = _log_uniform(rng, *space.lr_range)
    period = _choice(rng, space.cyclic_periods)
    cyclic = None if period is None else (lr / 10.0, lr, period)
    return WganConfig(
        prior=_choice(rng, space.priors),
        prior_dim=_choice(rng, space.prior_dims),
        width=_choice(rng, space.widths),
        depth=_choice(rng, space.depths),
        activation=_choice(rng, space.activations),
        init_scheme=_choice(rng, space.init_schemes),
        lipschitz=lipschitz,
        gp_weight=(_log_uniform(rng, *space.gp_weight_range)
                   if lipschitz == "gradient_penalty" else 10.0),
        n_critic=_choice(rng, space.n_critic),
        batch_size=space.batch_size,
        lr=lr,
        beta1=_choice(rng, space.beta1s),
        beta2=_choice(rng, space.beta2s),
        weight_decay=_choice(rng, space.weight_decays),
        cyclic=cyclic,
        dropout=_choice(rng, space.dropouts),
        batch_norm=_choice(rng, space.batch_norms),
        residual=_choice(rng, space.residuals),
        eval_every=space.eval_every,
        eval_samples=space.eval_samples,
    )


# -- schedule ------------------------------------------------------------


@dataclass(frozen=True)
class AshaSchedule:
    min_budget: int = 500
    max_budget: int = 20_000
    eta: int = 3

    def __post_init__(self):
        if self.eta < 2:
            raise ValueError("eta must be >= 2")
        if not 1 <= self.min_budget <= self.max_budget:
            raise ValueError("need 1 <= min_budget <= max_budget")

    def rungs(self):
        """Budget ladder min*eta^i, with the top rung pinned at max_budget."""
        out = []
        b = self.min_budget
        while b < self.max_budget:
            out.append(b)
            b *= self.eta
        out.append(self.max_budget)
        return out


@dataclass
class _Trial:
    trial_id: int
    config: object
    rung: int = -1                    # highest completed rung index
    scores: dict = field(default_factory=dict)
    promoted_to: int = 0              # rung index this trial may run next
    running: bool = False
    failed: bool = False
    checkpoint: str = None


class Journal:
    """Append-only NDJSON event log (no timestamps: byte-reproducible)."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, event):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def read(self):
        events = []
        if not self.path.exists():
            return events
        with open(self.path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(
                        f"corrupt journal entry at {self.path}:{lineno}: "
                        f"{line[:120]!r} ({exc})") from exc
        return events


class AshaScheduler:
    """Owns the boards and the journal; hands out tasks and ingests scores."""

    def __init__(self, space, schedule, trial_budget, seed, out_dir):
        self.space = space
        self.schedule = schedule
        self.trial_budget = trial_budget
        self.rung_budgets = schedule.rungs()
        self.sampler_rng = make_rng(seed, 0)
        self.seed = seed
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.journal = Journal(self.out_dir / "journal.ndjson")
        self.trials = []
        self.boards = [[] for _ in self.rung_budgets]   # completed scores per rung
        self.recovered = []    # (trial_id, rung) claimed but unscored before a resume

    # -- resume ----------------------------------------------------------

    def replay(self):
        """Rebuild boards from an existing journal; returns replayed event count.

        Work that was claimed but never scored (interrupted mid-run) is rolled
        back so claim() re-issues it.
        """
        events = self.journal.read()
        started = {}
        for ev in events:
            kind = ev["event"]
            if kind == "sampled":
                if ev["trial"] != len(self.trials):
                    raise ValueError(
                        f"journal out of order: sampled trial {ev['trial']} "
                        f"but {len(self.trials)} trials known")
                self.trials.append(_Trial(ev["trial"],
                                          WganConfig.from_dict(ev["config"])))
            elif kind == "started":
                started[ev["trial"]] = ev["rung"]
            elif kind == "scored":
                t = self.trials[ev["trial"]]
                t.rung = ev["rung"]
                t.scores[ev["rung"]] = ev["score"]
                t.checkpoint = ev.get("checkpoint")
                self.boards[ev["rung"]].append((ev["score"], ev["trial"]))
                started.pop(ev["trial"], None)
            elif kind == "promoted":
                self.trials[ev["trial"]].promoted_to = ev["rung"]
            elif kind == "failed":
                t = self.trials[ev["trial"]]
                t.failed = True
                t.rung = ev["rung"]
                t.scores[ev["rung"]] = float("inf")
                self.boards[ev["rung"]].append((float("inf"), ev["trial"]))
                started.pop(ev["trial"], None)
        # tasks claimed but never finished get re-issued first
        self.recovered = sorted(started.items())
        # advance the sampler stream past the replayed draws
        self.sampler_rng = make_rng(self.seed, 0)
        for _ in range(len(self.trials)):
            sample_config(self.space, self.sampler_rng)
        return len(events)

    # -- claim/report ------------------------------------------------------

    def _promotable(self):
        """Best claim-time-eligible trial to promote, or None."""
        if self.trial_budget == 1 and self.trials:
            # a one-trial search involves no promotion decisions: the lone
            # trial simply climbs the ladder to max_budget
            t = self.trials[0]
            if (not t.running and not t.failed
                    and 0 <= t.rung < len(self.rung_budgets) - 1
                    and t.promoted_to <= t.rung):
                return t
            return None
        for rung in range(len(self.rung_budgets) - 2, -1, -1):
            board = sorted(self.boards[rung])
            k = len(board) // self.schedule.eta
            for score, trial_id in board[:k]:
                t = self.trials[trial_id]
                if (not t.running and not t.failed and t.rung == rung
                        and t.promoted_to <= rung and math.isfinite(score)):
                    return t
        return None

    def claim(self):
        """Next task dict, or None if nothing can start right now."""
        t = self._promotable()
        if t is not None:
            next_rung = t.rung + 1
            t.promoted_to = next_rung
            t.running = True
            self.journal.append({"event": "promoted", "trial": t.trial_id,
                                 "rung": next_rung})
            return self._task(t, next_rung)
        if len(self.trials) < self.trial_budget:
            config = sample_config(self.space, self.sampler_rng)
            t = _Trial(len(self.trials), config)
            t.running = True
            self.trials.append(t)
            self.journal.append({"event": "sampled", "trial": t.trial_id,
                                 "config": config.to_dict()})
            return self._task(t, 0)
        return None

    def _task(self, trial, rung):
        self.journal.append({"event": "started", "trial": trial.trial_id,
                             "rung": rung, "budget": self.rung_budgets[rung]})
        return {
            "trial_id": trial.trial_id,
            "rung": rung,
            "budget": self.rung_budgets[rung],
            "config": trial.config,
            "resume_from": (str(self.out_dir / trial.checkpoint)
                            if trial.checkpoint else None),
            "workdir": str(self.out_dir / f"trial_{trial.trial_id:04d}"),
            "seed": trial.trial_id,
        }

    def report(self, trial_id, rung, score, checkpoint=None, error=None):
        t = self.trials[trial_id]
        t.running = False
        t.rung = rung
        # journal stores paths relative to out_dir so equal-seed runs in
        # different directories stay byte-identical
        if checkpoint is not None:
            checkpoint = os.path.relpath(checkpoint, self.out_dir)
        t.checkpoint = checkpoint
        if error is not None:
            t.failed = True
            t.scores[rung] = float("inf")
            self.boards[rung].append((float("inf"), trial_id))
            self.journal.append({"event": "failed", "trial": trial_id,
                                 "rung": rung, "error": str(error)[:500]})
        else:
            t.scores[rung] = score
            self.boards[rung].append((score, trial_id))
            self.journal.append({"event": "scored", "trial": trial_id,
                                 "rung": rung, "score": score,
                                 "checkpoint": checkpoint})

    def outstanding(self):
        return (any(t.running for t in self.trials)
                or len(self.trials) < self.trial_budget
                or self._promotable() is not None)

    def results(self):
        """Trial summaries sorted by best score (rank order of the search)."""
        out = []
        for t in self.trials:
            finite = [s for s in t.scores.values() if math.isfinite(s)]
            out.append({
                "trial": t.trial_id,
                "config": t.config.to_dict(),
                "rung_reached": t.rung,
                "scores": {str(r): s for r, s in sorted(t.scores.items())},
                "best_score": min(finite) if finite else float("inf"),
                "failed": t.failed,
                "checkpoint": t.checkpoint,
            })
        out.sort(key=lambda d: (d["best_score"], d["trial"]))
        return out


# -- objectives ----------------------------------------------------------


def wgan_objective(task, dataset_spec, data_seed_offset=10_000):
    """Train (or resume) the task's WGAN to its budget; score = W1 at budget.

    Runs in a worker process. Returns (score, checkpoint_path).
    """
    from .rng import restore_rng, rng_state
    from .synthdata import DatasetHandle, spec_from_dict
    from .wgan import TrainState, train

    workdir = Path(task["workdir"])
    workdir.mkdir(parents=True, exist_ok=True)
    spec = spec_from_dict(dataset_spec)
    if task["resume_from"]:
        doc = json.loads(Path(task["resume_from"]).read_text())
        state = TrainState.from_doc(doc["state"])
        data = DatasetHandle(spec, doc["data_seed"])
        data._rng = restore_rng(doc["data_rng"])
    else:
        state = None
        data = DatasetHandle(spec, task["seed"] + data_seed_offset)

    config = task["config"]
    state, record = train(config, data, seed=task["seed"], state=state,
                          target_steps=task["budget"])
    if record.failure is not None:
        raise RuntimeError(record.failure)

    ckpt = workdir / f"rung_{task['rung']}.json"
    ckpt.write_text(json.dumps({
        "state": state.to_doc(),
        "data_seed": data.seed,
        "data_rng": rng_state(data._rng),
    }))
    record.checkpoint_path = str(ckpt)
    record.save(workdir / f"record_rung_{task['rung']}.json")
    return record.final_w1, str(ckpt)


# -- driver --------------------------------------------------------------


def asha_run(space, schedule, trial_budget, objective, workers=1, seed=0,
             out_dir="search_out", resume=False):
    """Run the search; returns the scheduler's ranked results.

    `objective(task) -> (score, checkpoint)`; exceptions mark the trial failed.
    """
    sched = AshaScheduler(space, schedule, trial_budget, seed, out_dir)
    if resume:
        sched.replay()

    if workers <= 1:
        while sched.outstanding():
            task = sched.claim()
            if task is None:
                break
            try:
                score, ckpt = objective(task)
                sched.report(task["trial_id"], task["rung"], score, ckpt)
            except Exception as exc:
                sched.report(task["trial_id"], task["rung"], None, error=exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            inflight = {}
            while sched.outstanding() or inflight:
                while len(inflight) < workers:
                    task = sched.claim()
                    if task is None:
                        break
                    fut = pool.submit(objective, task)
                    inflight[fut] = task
                if not inflight:
                    break
                done, _ = wait(list(inflight), return_when=FIRST_COMPLETED)
                for fut in done:
                    task = inflight.pop(fut)
                    try:
                        score, ckpt = fut.result()
                        sched.report(task["trial_id"], task["rung"], score, ckpt)
                    except Exception as exc:
                        sched.report(task["trial_id"], task["rung"], None,
                                     error=exc)

    results = sched.results()
    (sched.out_dir / "results.json").write_text(
        json.dumps(results, indent=2, sort_keys=True) + "\n")
    return results


def top_results(out_dir, k=5):
    """The k best entries from a finished search directory."""
    path = Path(out_dir) / "results.json"
    results = json.loads(path.read_text())
    return results[:k]
