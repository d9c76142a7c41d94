"""Labeling-function engine and the generative label model.

Votes are ternary: TRUE (1), FALSE (0), ABSTAIN (-1). The label model is a
conditionally independent accuracy/propensity model: each labeling function j
abstains with probability 1 - beta_j and, when voting, agrees with the latent
label with probability alpha_j. Fit by EM with a closed-form M-step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FitError, InputFormatError

log = logging.getLogger(__name__)

TRUE = 1
FALSE = 0
ABSTAIN = -1

VOTE_NAMES = {TRUE: "TRUE", FALSE: "FALSE", ABSTAIN: "ABSTAIN"}


@dataclass(frozen=True)
class LabelingFunction:
    lf_id: str
    relation_type: str
    fn: object  # callable RelationCandidate -> vote

    def __call__(self, candidate) -> int:
        return self.fn(candidate)


@dataclass
class LabelMatrix:
    candidate_ids: list[str]
    lf_ids: list[str]
    votes: np.ndarray  # n x m int8
    lf_errors: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.votes = np.asarray(self.votes, dtype=np.int8)
        n, m = self.votes.shape
        if n != len(self.candidate_ids) or m != len(self.lf_ids):
            raise ConfigError("label matrix dimensions inconsistent with id lists")
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise ConfigError("candidate_ids must be unique")

    @property
    def n(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]

    def save(self, path) -> None:
        """Columnar binary format: one JSON header line (n, m, lf_ids,
        candidate_ids) followed by the raw int8 vote bytes, row-major."""
        header = {
            "n": self.n,
            "m": self.m,
            "lf_ids": self.lf_ids,
            "candidate_ids": self.candidate_ids,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode("utf-8"))
            fh.write(b"\n")
            fh.write(self.votes.astype(np.int8).tobytes())

    @classmethod
    def load(cls, path) -> "LabelMatrix":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            raw = fh.read()
        votes = np.frombuffer(raw, dtype=np.int8).reshape(header["n"], header["m"]).copy()
        return cls(header["candidate_ids"], header["lf_ids"], votes)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("candidate_id,lf_id,vote\n")
            for i, cid in enumerate(self.candidate_ids):
                for j, lf_id in enumerate(self.lf_ids):
                    fh.write(f"{cid},{lf_id},{VOTE_NAMES[int(self.votes[i, j])]}\n")


def apply_lfs(candidates, lfs) -> LabelMatrix:
    """Apply labeling functions to candidates. An LF raising internally
    records ABSTAIN for that row and increments its error counter."""
    lfs = list(lfs)
    candidates = list(candidates)
    if candidates and lfs:
        bad = [lf.lf_id for lf in lfs if lf.relation_type != candidates[0].relation_type]
        if bad:
            raise ConfigError(f"LFs {bad} do not share the candidates' relation type")
    votes = np.full((len(candidates), len(lfs)), ABSTAIN, dtype=np.int8)
    errors = {lf.lf_id: 0 for lf in lfs}
    for i, cand in enumerate(candidates):
        for j, lf in enumerate(lfs):
            try:
                v = lf(cand)
            except Exception:
                errors[lf.lf_id] += 1
                v = ABSTAIN
            if v not in (TRUE, FALSE, ABSTAIN):
                raise ConfigError(f"LF {lf.lf_id} returned invalid vote {v!r}")
            votes[i, j] = v
    return LabelMatrix(
        candidate_ids=[c.candidate_id for c in candidates],
        lf_ids=[lf.lf_id for lf in lfs],
        votes=votes,
        lf_errors=errors,
    )


@dataclass(frozen=True)
class LFStat:
    coverage: float
    overlap: float
    conflict: float
    accuracy: float | None = None


@dataclass
class LFStats:
    per_lf: dict[str, LFStat]


def lf_statistics(matrix: LabelMatrix, gold: dict[str, int] | None = None) -> LFStats:
    """Coverage/overlap/conflict per LF, plus empirical accuracy on gold
    (over non-abstaining rows) when gold labels are supplied."""
    V = matrix.votes
    n, m = V.shape
    nonabstain = V != ABSTAIN
    if gold is not None:
        missing = sorted(set(gold) - set(matrix.candidate_ids))
        if missing:
            raise InputFormatError(
                f"gold ids not in matrix: {missing[:5]}{'...' if len(missing) > 5 else ''}",
                context={"missing": missing},
            )
        idx = {cid: i for i, cid in enumerate(matrix.candidate_ids)}
    stats = {}
    counts = nonabstain.sum(axis=1)
    for j, lf_id in enumerate(matrix.lf_ids):
        mask_j = nonabstain[:, j]
        cov = float(mask_j.mean()) if n else 0.0
        overlap_rows = mask_j & (counts >= 2)
        overlap = float(overlap_rows.mean()) if n else 0.0
        conflict_rows = np.zeros(n, dtype=bool)
        for k in range(m):
            if k == j:
                continue
            both = mask_j & nonabstain[:, k]
            conflict_rows |= both & (V[:, j] != V[:, k])
        conflict = float(conflict_rows.mean()) if n else 0.0
        accuracy = None
        if gold is not None:
            rows = [idx[cid] for cid in gold if mask_j[idx[cid]]]
            if rows:
                agree = sum(int(V[r, j]) == int(gold[matrix.candidate_ids[r]]) for r in rows)
                accuracy = agree / len(rows)
        stats[lf_id] = LFStat(coverage=cov, overlap=overlap, conflict=conflict, accuracy=accuracy)
    return LFStats(per_lf=stats)


def covered_candidate_ids(matrix: LabelMatrix) -> set[str]:
    """Ids of rows where at least one LF did not abstain. All-abstain rows
    carry no supervision signal and are excluded from classifier training."""
    mask = (matrix.votes != ABSTAIN).any(axis=1)
    return {cid for cid, keep in zip(matrix.candidate_ids, mask) if keep}


@dataclass(frozen=True)
class ProbabilisticLabel:
    candidate_id: str
    p_true: float


def soft_majority_vote(matrix: LabelMatrix) -> list[ProbabilisticLabel]:
    """p = #TRUE / (#TRUE + #FALSE) per row; all-abstain rows get 0.5."""
    V = matrix.votes
    n_true = (V == TRUE).sum(axis=1).astype(float)
    n_false = (V == FALSE).sum(axis=1).astype(float)
    denom = n_true + n_false
    with np.errstate(invalid="ignore"):
        p = np.where(denom > 0, n_true / np.where(denom > 0, denom, 1.0), 0.5)
    return [
        ProbabilisticLabel(cid, float(pi)) for cid, pi in zip(matrix.candidate_ids, p)
    ]


@dataclass(frozen=True)
class LabelModelConfig:
    max_iter: int = 100
    tol: float = 1e-6
    class_prior: float = 0.5
    learn_prior: bool = False
    init_alpha: float = 0.7
    alpha_min: float = 0.01
    alpha_max: float = 0.99


@dataclass
class LabelModel:
    lf_ids: list[str]
    class_prior: float
    alpha: np.ndarray
    beta: np.ndarray
    n_iter: int = 0
    log_likelihood: float = float("nan")
    ll_history: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "lf_ids": self.lf_ids,
                "class_prior": self.class_prior,
                "alpha": list(map(float, self.alpha)),
                "beta": list(map(float, self.beta)),
                "n_iter": self.n_iter,
                "log_likelihood": self.log_likelihood,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, raw: str) -> "LabelModel":
        d = json.loads(raw)
        return cls(
            lf_ids=d["lf_ids"],
            class_prior=d["class_prior"],
            alpha=np.asarray(d["alpha"], dtype=float),
            beta=np.asarray(d["beta"], dtype=float),
            n_iter=d.get("n_iter", 0),
            log_likelihood=d.get("log_likelihood", float("nan")),
        )


def _log_class_scores(V, alpha, beta, eps=1e-12):
    """Per-row log P(votes | Y=T) and log P(votes | Y=F)."""
    a = np.clip(alpha, eps, 1 - eps)
    b = np.clip(beta, 0.0, 1.0)
    log_abstain = np.log(np.clip(1 - b, eps, 1.0))
    log_agree = np.log(np.clip(b * a, eps, 1.0))
    log_disagree = np.log(np.clip(b * (1 - a), eps, 1.0))
    is_true = V == TRUE
    is_false = V == FALSE
    is_abs = V == ABSTAIN
    logA = (
        is_true @ log_agree + is_false @ log_disagree + is_abs @ log_abstain
    )
    logB = (
        is_true @ log_disagree + is_false @ log_agree + is_abs @ log_abstain
    )
    return logA, logB


def _posterior(logA, logB, pi):
    z = np.log(pi) - np.log(1 - pi) + logA - logB
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _loglik(logA, logB, pi):
    hi = np.maximum(logA + np.log(pi), logB + np.log(1 - pi))
    lo = np.minimum(logA + np.log(pi), logB + np.log(1 - pi))
    return float(np.sum(hi + np.log1p(np.exp(lo - hi))))


def fit_label_model(matrix: LabelMatrix, config: LabelModelConfig | None = None) -> LabelModel:
    """EM fit of the accuracy/propensity model.

    E-step computes posteriors q_i; M-step sets alpha_j to the q-weighted
    agreement rate over non-abstaining rows. beta_j is pinned to empirical
    coverage. Stops on relative log-likelihood change < tol or max_iter.
    """
    config = config or LabelModelConfig()
    V = matrix.votes
    n, m = V.shape
    if n < 1 or m < 1:
        raise FitError("label matrix must be nonempty")
    nonabstain = V != ABSTAIN
    if not nonabstain.any():
        raise FitError("no signal: every labeling function abstained on every row")
    beta = nonabstain.mean(axis=0)
    alpha = np.full(m, config.init_alpha)
    pi = config.class_prior
    if not 0 < pi < 1:
        raise ConfigError("class prior must be in (0, 1)")
    ll_history: list[float] = []
    prev_ll = -np.inf
    n_iter = 0
    is_true = (V == TRUE).astype(float)
    is_false = (V == FALSE).astype(float)
    denom = nonabstain.sum(axis=0).astype(float)
    for n_iter in range(1, config.max_iter + 1):
        logA, logB = _log_class_scores(V, alpha, beta)
        q = _posterior(logA, logB, pi)
        ll = _loglik(logA, logB, pi)
        ll_history.append(ll)
        if prev_ll != -np.inf and abs(ll - prev_ll) < config.tol * abs(prev_ll):
            break
        prev_ll = ll
        agree = q @ is_true + (1 - q) @ is_false
        with np.errstate(invalid="ignore"):
            new_alpha = np.where(denom > 0, agree / np.where(denom > 0, denom, 1.0), alpha)
        alpha = np.clip(new_alpha, config.alpha_min, config.alpha_max)
        if config.learn_prior:
            pi = float(np.clip(q.mean(), 1e-3, 1 - 1e-3))
    # Symmetry breaking: labeling functions are assumed better than chance.
    active = beta > 0
    if active.any() and float(alpha[active].mean()) < 0.5:
        alpha = np.clip(1 - alpha, config.alpha_min, config.alpha_max)
        logA, logB = _log_class_scores(V, alpha, beta)
        ll_history.append(_loglik(logA, logB, pi))
    return LabelModel(
        lf_ids=list(matrix.lf_ids),
        class_prior=pi,
        alpha=alpha,
        beta=beta,
        n_iter=n_iter,
        log_likelihood=ll_history[-1],
        ll_history=ll_history,
    )


def posterior_labels(model: LabelModel, matrix: LabelMatrix) -> list[ProbabilisticLabel]:
    """Bayes-rule posteriors under the fitted model; all-abstain rows get the
    class prior."""
    if list(model.lf_ids) != list(matrix.lf_ids):
        raise ConfigError("model and matrix lf_ids do not match")
    logA, logB = _log_class_scores(matrix.votes, model.alpha, model.beta)
    q = _posterior(logA, logB, model.class_prior)
    all_abstain = (matrix.votes == ABSTAIN).all(axis=1)
    q = np.where(all_abstain, model.class_prior, q)
    return [
        ProbabilisticLabel(cid, float(p)) for cid, p in zip(matrix.candidate_ids, q)
    ]


def labels_to_csv(labels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("candidate_id,p_true\n")
        for lab in labels:
            fh.write(f"{lab.candidate_id},{lab.p_true:.6f}\n")


def labels_from_csv(path) -> list[ProbabilisticLabel]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("candidate_id"):
            raise InputFormatError(f"{path}: expected candidate_id,p_true header")
        for line in fh:
            if not line.strip():
                continue
            cid, p = line.rstrip("\n").split(",")
            out.append(ProbabilisticLabel(cid, float(p)))
    return out
