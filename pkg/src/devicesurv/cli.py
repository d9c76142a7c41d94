"""Command-line surface wiring the pipeline stages together.

Stages communicate through files in the configured output directory. Every
command reads a declarative JSON project config, holds a lock on the output
directory, prints a one-line summary on success, and on failure prints an
error JSON ({code, message, context}) to stderr with a per-error-class exit
code: 2 config, 3 input format, 4 missing artifact, 5 fit failure, 1 other.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import importlib.util
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime

import click
import numpy as np

from . import classifier as clf
from . import countreg, evaluation, lf_lib, outcomes, reconcile, survival, synth, weaksup
from .corpus import ingest_notes, preprocess
from .defaults import default_dictionaries, default_trigger_lexicon, load_implant_catalog
from .errors import (
    ConfigError,
    DeviceSurvError,
    FitError,
    InputFormatError,
    MissingArtifactError,
)
from .extraction import extract_candidates, load_dictionary, load_trigger_lexicon

EXIT_CODES = {
    "config": 2,
    "input_format": 3,
    "missing_artifact": 4,
    "fit": 5,
}

_KNOWN_PATH_KEYS = {
    "notes", "dictionaries", "trigger_lexicon", "registry", "patients",
    "coded_events", "text_events", "gold_relations", "dev_gold",
    "implant_catalog", "lf_module",
}
_KNOWN_PARAM_KEYS = {
    "seed", "relation_type", "merge_window_days", "date_tolerance_days",
    "split_sizes", "epochs", "learning_rate", "l2", "batch_size",
    "class_prior", "lf_set", "outcome_class", "threshold",
}


@dataclass
class ProjectConfig:
    output_dir: str
    paths: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True).encode("utf-8")
        return hashlib.sha1(canon).hexdigest()[:12]

    def path(self, key: str, required: bool = True) -> str | None:
        value = self.paths.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config paths.{key} is required for this command")
            return None
        return value

    def param(self, key: str, default=None):
        return self.params.get(key, default)

    def artifact(self, name: str) -> str:
        return os.path.join(self.output_dir, name)


def load_config(path: str) -> ProjectConfig:
    if not os.path.exists(path):
        raise MissingArtifactError(f"config file not found: {path}", context={"path": path})
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: invalid JSON ({exc.msg})") from exc
    unknown = set(raw) - {"output_dir", "paths", "params"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    paths = dict(raw.get("paths", {}))
    params = dict(raw.get("params", {}))
    bad = set(paths) - _KNOWN_PATH_KEYS
    if bad:
        raise ConfigError(f"unknown config paths keys: {sorted(bad)}")
    bad = set(params) - _KNOWN_PARAM_KEYS
    if bad:
        raise ConfigError(f"unknown config params keys: {sorted(bad)}")
    if "output_dir" not in raw:
        raise ConfigError("config must set output_dir")
    # Environment overrides apply to paths only, e.g. DEVICESURV_NOTES.
    for key in _KNOWN_PATH_KEYS:
        env = os.environ.get(f"DEVICESURV_{key.upper()}")
        if env:
            paths[key] = env
    for key, value in paths.items():
        targets = value if isinstance(value, list) else [value]
        for target in targets:
            if not os.path.exists(target):
                raise MissingArtifactError(
                    f"configured path {key} does not exist: {target}",
                    context={"key": key, "path": target},
                )
    cfg = ProjectConfig(output_dir=raw["output_dir"], paths=paths, params=params, raw=raw)
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg


class _Lock:
    """One command at a time per output directory."""

    def __init__(self, outdir: str):
        self.path = os.path.join(outdir, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run: {self.path} "
                "(delete the lock file if that run crashed)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return False


def _warn_if_stale(inputs, output) -> None:
    if not os.path.exists(output):
        return
    out_mtime = os.path.getmtime(output)
    for inp in inputs:
        if inp and os.path.exists(inp) and os.path.getmtime(inp) > out_mtime:
            click.echo(
                f"warning: {output} is older than input {inp}; regenerating",
                err=True,
            )


def _write_meta(cfg: ProjectConfig, command: str, outputs) -> None:
    meta = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "written_at": datetime.now().isoformat(timespec="seconds"),
        "outputs": list(outputs),
    }
    with open(cfg.artifact(f"{command.replace(' ', '_')}.meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


def command_wrapper(fn):
    """Uniform error handling: library errors become error JSON + exit code."""

    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except DeviceSurvError as exc:
            click.echo(json.dumps(exc.to_json()), err=True)
            sys.exit(EXIT_CODES.get(exc.code, 1))
        except OSError as exc:
            click.echo(
                json.dumps({"code": "io", "message": str(exc), "context": {}}), err=True
            )
            sys.exit(1)

    return wrapped


def _load_resources(cfg: ProjectConfig):
    dict_paths = cfg.paths.get("dictionaries")
    if dict_paths:
        dictionaries = [load_dictionary(p) for p in dict_paths]
    else:
        dictionaries = default_dictionaries()
    trig = cfg.paths.get("trigger_lexicon")
    lexicon = load_trigger_lexicon(trig) if trig else default_trigger_lexicon()
    return dictionaries, lexicon


def _load_documents(cfg: ProjectConfig):
    notes_path = cfg.path("notes")
    return [preprocess(note) for note in ingest_notes(notes_path)]


def _load_candidates(cfg: ProjectConfig):
    """Recompute candidates deterministically from the notes file."""
    dictionaries, lexicon = _load_resources(cfg)
    rtype = cfg.param("relation_type", "pain-anatomy")
    out = []
    for doc in _load_documents(cfg):
        out.extend(extract_candidates(doc, dictionaries, lexicon, relation_types=(rtype,)))
    return out


def _get_lfs(cfg: ProjectConfig):
    rtype = cfg.param("relation_type", "pain-anatomy")
    module_path = cfg.paths.get("lf_module")
    if module_path:
        spec = importlib.util.spec_from_file_location("user_lfs", module_path)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        if not hasattr(module, "get_lfs"):
            raise ConfigError(f"{module_path} must define get_lfs(relation_type)")
        return list(module.get_lfs(rtype))
    lf_set = cfg.param("lf_set", "starter")
    if lf_set == "starter":
        return lf_lib.starter_lfs(rtype)
    if lf_set == "benchmark":
        return synth.benchmark_lfs()
    raise ConfigError(f"unknown lf_set {lf_set!r} (use 'starter' or 'benchmark')")


def _read_gold(path) -> dict[str, int]:
    out: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "candidate_id" not in reader.fieldnames:
            raise InputFormatError(f"{path}: expected a candidate_id column")
        label_col = "label" if "label" in reader.fieldnames else "gold"
        if label_col not in reader.fieldnames:
            raise InputFormatError(f"{path}: expected a label column")
        for row in reader:
            cid = row["candidate_id"]
            if cid in out:
                raise InputFormatError(f"{path}: duplicate candidate_id {cid!r}")
            out[cid] = int(row[label_col])
    return out


def _read_scores(path) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["candidate_id"]] = float(row["score"])
    return out


@click.group()
def main():
    """Clinical-text device-event extraction and surveillance statistics."""


_config_option = click.option(
    "--config", "config_path", required=True, type=str, help="Project config JSON."
)


@main.command()
@_config_option
@click.option("--on-error", type=click.Choice(["skip", "abort"]), default="skip")
@command_wrapper
def ingest(config_path, on_error):
    """Validate and normalize the notes file."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        out_path = cfg.artifact("notes.normalized.jsonl")
        _warn_if_stale([cfg.path("notes")], out_path)
        n = 0
        with open(out_path, "w", encoding="utf-8") as fh:
            for note in ingest_notes(cfg.path("notes"), on_error=on_error):
                fh.write(
                    json.dumps(
                        {
                            "note_id": note.note_id,
                            "patient_id": note.patient_id,
                            "note_datetime": note.note_datetime.isoformat(),
                            "note_type": note.note_type,
                            "text": note.text,
                        }
                    )
                    + "\n"
                )
                n += 1
        _write_meta(cfg, "ingest", [out_path])
    click.echo(f"ingest: {n} notes -> {out_path}")


@main.command()
@_config_option
@command_wrapper
def tag(config_path):
    """Tag entity mentions with attributes; write mentions.csv."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        from .extraction import apply_context, tag_entities

        dictionaries, lexicon = _load_resources(cfg)
        out_path = cfg.artifact("mentions.csv")
        _warn_if_stale([cfg.path("notes")], out_path)
        n = 0
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["note_id", "char_start", "char_end", "surface", "entity_type",
                 "canonical_id", "subcategory", "attributes"]
            )
            for doc in _load_documents(cfg):
                for sent in doc.sentences:
                    mentions = tag_entities(sent, dictionaries)
                    if not mentions:
                        continue
                    apply_context(
                        sent, mentions, lexicon, doc.section_for(sent.char_start), doc.dates_in(sent)
                    )
                    for m in mentions:
                        w.writerow(
                            [doc.note.note_id, m.char_start, m.char_end, m.surface,
                             m.entity_type, m.canonical_id, m.subcategory or "",
                             "|".join(sorted(m.attributes))]
                        )
                        n += 1
        _write_meta(cfg, "tag", [out_path])
    click.echo(f"tag: {n} mentions -> {out_path}")


@main.command()
@_config_option
@command_wrapper
def candidates(config_path):
    """Generate relation candidates; write candidates.csv."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        cands = _load_candidates(cfg)
        out_path = cfg.artifact("candidates.csv")
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["candidate_id", "relation_type", "note_id", "section",
                 "arg1_surface", "arg1_id", "arg2_surface", "arg2_id"]
            )
            for c in cands:
                w.writerow(
                    [c.candidate_id, c.relation_type, c.note_id, c.section_header,
                     c.arg1.surface, c.arg1.canonical_id, c.arg2.surface, c.arg2.canonical_id]
                )
        _write_meta(cfg, "candidates", [out_path])
    click.echo(f"candidates: {len(cands)} candidates -> {out_path}")


@main.group()
def lf():
    """Labeling-function commands."""


@lf.command("apply")
@_config_option
@command_wrapper
def lf_apply(config_path):
    """Apply the configured LF set; write the label matrix."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        cands = _load_candidates(cfg)
        matrix = weaksup.apply_lfs(cands, _get_lfs(cfg))
        out_path = cfg.artifact("label_matrix.bin")
        matrix.save(out_path)
        matrix.write_csv(cfg.artifact("label_matrix.csv"))
        _write_meta(cfg, "lf apply", [out_path])
    click.echo(
        f"lf apply: {matrix.n} candidates x {matrix.m} LFs -> {out_path} "
        f"(errors: {sum(matrix.lf_errors.values())})"
    )


@lf.command("stats")
@_config_option
@command_wrapper
def lf_stats(config_path):
    """Per-LF coverage/overlap/conflict (and accuracy when dev gold is set)."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        matrix_path = cfg.artifact("label_matrix.bin")
        if not os.path.exists(matrix_path):
            raise MissingArtifactError(
                f"label matrix not found: {matrix_path} (run 'lf apply' first)"
            )
        matrix = weaksup.LabelMatrix.load(matrix_path)
        if matrix.n == 0:
            raise ConfigError("label matrix has no candidates")
        gold_path = cfg.paths.get("dev_gold")
        gold = None
        if gold_path:
            gold = {
                cid: lab for cid, lab in _read_gold(gold_path).items()
                if cid in set(matrix.candidate_ids)
            }
        stats = weaksup.lf_statistics(matrix, gold)
        out_path = cfg.artifact("lf_stats.csv")
        with_acc = gold is not None
        header = ["lf_id", "coverage", "overlap", "conflict"] + (["accuracy"] if with_acc else [])
        click.echo(",".join(header))
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for lf_id, st in stats.per_lf.items():
                row = [lf_id, f"{st.coverage:.4f}", f"{st.overlap:.4f}", f"{st.conflict:.4f}"]
                if with_acc:
                    row.append("" if st.accuracy is None else f"{st.accuracy:.4f}")
                w.writerow(row)
                click.echo(",".join(row))
        _write_meta(cfg, "lf stats", [out_path])
    click.echo(f"lf stats: {len(stats.per_lf)} LFs -> {out_path}")


@main.group()
def labelmodel():
    """Generative label-model commands."""


@labelmodel.command("fit")
@_config_option
@command_wrapper
def labelmodel_fit(config_path):
    """Fit the label model and write posterior probabilistic labels."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        matrix_path = cfg.artifact("label_matrix.bin")
        if not os.path.exists(matrix_path):
            raise MissingArtifactError(
                f"label matrix not found: {matrix_path} (run 'lf apply' first)"
            )
        matrix = weaksup.LabelMatrix.load(matrix_path)
        config = weaksup.LabelModelConfig(class_prior=float(cfg.param("class_prior", 0.5)))
        model = weaksup.fit_label_model(matrix, config)
        model_path = cfg.artifact("label_model.json")
        with open(model_path, "w", encoding="utf-8") as fh:
            fh.write(model.to_json())
        labels = weaksup.posterior_labels(model, matrix)
        labels_path = cfg.artifact("labels.csv")
        weaksup.labels_to_csv(labels, labels_path)
        _write_meta(cfg, "labelmodel fit", [model_path, labels_path])
    click.echo(
        f"labelmodel fit: {model.n_iter} EM iterations, "
        f"log-likelihood {model.log_likelihood:.2f} -> {model_path}"
    )


@main.command()
@_config_option
@command_wrapper
def train(config_path):
    """Train the noise-aware classifier on the probabilistic labels."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        labels_path = cfg.artifact("labels.csv")
        if not os.path.exists(labels_path):
            raise MissingArtifactError(
                f"labels not found: {labels_path} (run 'labelmodel fit' first)"
            )
        labels = weaksup.labels_from_csv(labels_path)
        cands = _load_candidates(cfg)
        # All-abstain rows carry no supervision signal; train on covered rows.
        matrix_path = cfg.artifact("label_matrix.bin")
        if os.path.exists(matrix_path):
            covered = weaksup.covered_candidate_ids(weaksup.LabelMatrix.load(matrix_path))
            train_cands = [c for c in cands if c.candidate_id in covered]
        else:
            train_cands = cands
        train_cfg = clf.TrainConfig(
            seed=int(cfg.param("seed", 0)),
            epochs=int(cfg.param("epochs", 20)),
            learning_rate=float(cfg.param("learning_rate", 0.5)),
            l2=float(cfg.param("l2", 1e-4)),
            batch_size=int(cfg.param("batch_size", 32)),
        )
        model = clf.train_noise_aware(train_cands, labels, train_cfg)
        gold_path = cfg.paths.get("dev_gold")
        if gold_path:
            dev_gold = _read_gold(gold_path)
            dev_cands = [c for c in cands if c.candidate_id in dev_gold]
            model.threshold = clf.select_threshold(model, dev_cands, dev_gold)
        elif cfg.param("threshold") is not None:
            model.threshold = float(cfg.param("threshold"))
        model_path = cfg.artifact("classifier.bin")
        model.save(model_path)
        _write_meta(cfg, "train", [model_path])
    click.echo(
        f"train: {len(cands)} candidates, threshold {model.threshold:.2f} -> {model_path}"
    )


@main.command()
@_config_option
@command_wrapper
def predict(config_path):
    """Score candidates with the trained classifier; write scores.csv."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        model_path = cfg.artifact("classifier.bin")
        if not os.path.exists(model_path):
            raise MissingArtifactError(
                f"classifier not found: {model_path} (run 'train' first)"
            )
        model = clf.ClassifierModel.load(model_path)
        cands = _load_candidates(cfg)
        scores = clf.predict_many(model, cands)
        out_path = cfg.artifact("scores.csv")
        clf.scores_to_csv([c.candidate_id for c in cands], scores, model.threshold, out_path)
        _write_meta(cfg, "predict", [out_path])
    click.echo(f"predict: {len(cands)} candidates -> {out_path}")


@main.command("eval")
@_config_option
@command_wrapper
def eval_cmd(config_path):
    """Score predictions against gold labels; write metrics.csv."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        scores_path = cfg.artifact("scores.csv")
        if not os.path.exists(scores_path):
            raise MissingArtifactError(
                f"scores not found: {scores_path} (run 'predict' first)"
            )
        gold = _read_gold(cfg.path("gold_relations"))
        scores = _read_scores(scores_path)
        model = clf.ClassifierModel.load(cfg.artifact("classifier.bin"))
        restricted = {cid: s for cid, s in scores.items() if cid in gold}
        metrics = evaluation.prf1(restricted, gold, threshold=model.threshold)
        out_path = cfg.artifact("metrics.csv")
        evaluation.metrics_to_csv(metrics, out_path)
        _write_meta(cfg, "eval", [out_path])
    p, r, f = metrics.rounded()
    click.echo(f"eval: P={p} R={r} F1={f} -> {out_path}")


@main.command("reconcile")
@_config_option
@command_wrapper
def reconcile_cmd(config_path):
    """Reconcile extracted implant records against the registry snapshot."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        extracted_path = cfg.artifact("extracted_implants.csv")
        if not os.path.exists(extracted_path):
            raise MissingArtifactError(
                f"extracted implant records not found: {extracted_path}"
            )
        extracted = reconcile.load_registry_csv(extracted_path)
        registry = reconcile.load_registry_csv(cfg.path("registry"))
        catalog = load_implant_catalog(cfg.paths.get("implant_catalog"))
        extracted = [
            reconcile.RegistryRecord(
                r.patient_id, r.surgery_date, r.component_role,
                reconcile.canonicalize_manufacturer(r.manufacturer, catalog), r.model,
            )
            for r in extracted
        ]
        registry = [
            reconcile.RegistryRecord(
                r.patient_id, r.surgery_date, r.component_role,
                reconcile.canonicalize_manufacturer(r.manufacturer, catalog), r.model,
            )
            for r in registry
        ]
        report = reconcile.reconcile_registry(
            extracted, registry, int(cfg.param("date_tolerance_days", 30))
        )
        out_path = cfg.artifact("reconciliation.csv")
        report.write_csv(out_path)
        report.write_summary_json(cfg.artifact("reconciliation_summary.json"))
        _write_meta(cfg, "reconcile", [out_path])
    counts = report.counts()
    click.echo(
        "reconcile: "
        + ", ".join(f"{k}={v}" for k, v in counts.items())
        + f" -> {out_path}"
    )


@main.command()
@_config_option
@command_wrapper
def cohort(config_path):
    """Select the surgical cohort from coded patient records."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        records = outcomes.patients_from_csv(cfg.path("patients"))
        selected, coded_events = outcomes.select_cohort(records)
        out_path = cfg.artifact("cohort.csv")
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "index_date", "last_contact_date",
                        "age_band", "sex", "race", "ethnicity", "cci"])
            for pid in sorted(selected):
                pat = selected[pid]
                w.writerow(
                    [pid, pat.index_date.isoformat(), pat.last_contact_date.isoformat()]
                    + [pat.covariates.get(k, "") for k in
                       ("age_band", "sex", "race", "ethnicity", "cci")]
                )
        events_path = cfg.artifact("coded_events.csv")
        outcomes.events_to_csv(coded_events, events_path)
        _write_meta(cfg, "cohort", [out_path, events_path])
    click.echo(
        f"cohort: {len(selected)} patients, {len(coded_events)} coded revision "
        f"events -> {out_path}"
    )


@main.group()
def events():
    """Event-stream commands."""


@events.command("merge")
@_config_option
@command_wrapper
def events_merge(config_path):
    """Merge coded and text-derived events into a unified stream."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        coded_path = cfg.paths.get("coded_events") or cfg.artifact("coded_events.csv")
        if not os.path.exists(coded_path):
            raise MissingArtifactError(f"coded events not found: {coded_path}")
        coded = outcomes.events_from_csv(coded_path)
        text = outcomes.events_from_csv(cfg.path("text_events"))
        merged = outcomes.merge_events(
            coded, text, int(cfg.param("merge_window_days", 90))
        )
        out_path = cfg.artifact("merged_events.csv")
        outcomes.events_to_csv(merged, out_path)
        _write_meta(cfg, "events merge", [out_path])
    click.echo(
        f"events merge: {len(coded)} coded + {len(text)} text -> "
        f"{len(merged)} unified events -> {out_path}"
    )


def _load_survival_dataset(cfg: ProjectConfig) -> outcomes.SurvivalDataset:
    cohort_path = cfg.artifact("cohort.csv")
    if not os.path.exists(cohort_path):
        raise MissingArtifactError(f"cohort not found: {cohort_path} (run 'cohort' first)")
    from datetime import date

    cohort: dict[str, outcomes.CohortPatient] = {}
    with open(cohort_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cohort[row["patient_id"]] = outcomes.CohortPatient(
                patient_id=row["patient_id"],
                index_date=date.fromisoformat(row["index_date"]),
                last_contact_date=date.fromisoformat(row["last_contact_date"]),
                covariates={
                    k: row[k] for k in ("age_band", "sex", "race", "ethnicity", "cci")
                },
            )
    events_path = cfg.artifact("merged_events.csv")
    if not os.path.exists(events_path):
        raise MissingArtifactError(
            f"merged events not found: {events_path} (run 'events merge' first)"
        )
    evts = outcomes.events_from_csv(events_path)
    spec = [
        outcomes.Covariate("age_band", reference="40-49"),
        outcomes.Covariate("sex", reference="F"),
        outcomes.Covariate("cci", reference="none"),
    ]
    return outcomes.build_survival_dataset(
        cohort, evts, cfg.param("outcome_class", "revision"), spec
    )


@main.group("survival")
def survival_group():
    """Survival-analysis commands."""


@survival_group.command("km")
@_config_option
@command_wrapper
def survival_km(config_path):
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        ds = _load_survival_dataset(cfg)
        curve = survival.km_estimate(ds)
        out_path = cfg.artifact("km.csv")
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "survival", "n_at_risk", "n_events"])
            for t, s, nr, ne in zip(curve.times, curve.survival, curve.n_at_risk, curve.n_events):
                w.writerow([f"{t:.0f}", f"{s:.6f}", nr, ne])
        _write_meta(cfg, "survival km", [out_path])
    click.echo(f"survival km: {len(curve.times)} event times -> {out_path}")


@survival_group.command("logrank")
@_config_option
@click.option("--group-by", default="cci", show_default=True,
              help="Covariate grouping the comparison.")
@command_wrapper
def survival_logrank(config_path, group_by):
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        ds = _load_survival_dataset(cfg)
        # Re-group by the requested covariate column.
        cohort_path = cfg.artifact("cohort.csv")
        with open(cohort_path, newline="", encoding="utf-8") as fh:
            by_pid = {row["patient_id"]: row.get(group_by, "Unknown")
                      for row in csv.DictReader(fh)}
        ds.groups = [by_pid.get(pid, "Unknown") for pid in ds.subject_ids]
        result = survival.logrank_test(ds)
        out_path = cfg.artifact("logrank.json")
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(
                {"statistic": result.statistic, "df": result.df, "p_value": result.p_value},
                fh, indent=2,
            )
        _write_meta(cfg, "survival logrank", [out_path])
    click.echo(
        f"survival logrank: chi2={result.statistic:.3f} df={result.df} "
        f"p={result.p_value:.4g} -> {out_path}"
    )


@survival_group.command("cox")
@_config_option
@command_wrapper
def survival_cox(config_path):
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        ds = _load_survival_dataset(cfg)
        fit = survival.cox_fit(ds)
        out_path = cfg.artifact("cox.json")
        payload = {
            "terms": list(fit.summary_rows()),
            "loglik": fit.loglik,
            "loglik_null": fit.loglik_null,
            "score_statistic": fit.score_statistic,
            "score_p_value": fit.score_p_value,
            "n_iter": fit.n_iter,
            "groups": _group_summaries(ds),
        }
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        _write_meta(cfg, "survival cox", [out_path])
    click.echo(
        f"survival cox: {len(fit.columns)} terms, log-likelihood {fit.loglik:.2f} "
        f"-> {out_path}"
    )


def _group_summaries(ds: outcomes.SurvivalDataset):
    """Per-group patient/event/person-year summaries for the forest table."""
    labels = ds.groups if ds.groups is not None else ["All"] * len(ds.subject_ids)
    out = {}
    for g in sorted(set(labels)):
        mask = np.array([x == g for x in labels])
        out[g] = {
            "n_patients": int(mask.sum()),
            "n_events": int(ds.events[mask].sum()),
            "person_years": float(ds.times[mask].sum() / 365.25),
        }
    return out


@main.group()
def regression():
    """Count-regression commands."""


@regression.command("nb")
@_config_option
@click.option("--counts-file", required=True, type=str,
              help="CSV with columns patient_id, count, and optional exposure.")
@command_wrapper
def regression_nb(config_path, counts_file):
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        if not os.path.exists(counts_file):
            raise MissingArtifactError(f"counts file not found: {counts_file}")
        counts, exposure = [], []
        with open(counts_file, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "count" not in reader.fieldnames:
                raise InputFormatError(f"{counts_file}: expected a count column")
            has_exposure = "exposure" in reader.fieldnames
            for row in reader:
                counts.append(int(row["count"]))
                if has_exposure:
                    exposure.append(float(row["exposure"]))
        fit = countreg.nb_fit(
            counts, np.zeros((len(counts), 0)), columns=[],
            exposure=exposure if exposure else None,
        )
        out_path = cfg.artifact("nb.json")
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(
                {"terms": list(fit.summary_rows()), "theta": fit.theta,
                 "loglik": fit.loglik, "aic": fit.aic}, fh, indent=2,
            )
        _write_meta(cfg, "regression nb", [out_path])
    click.echo(
        f"regression nb: theta={fit.theta:.3g} AIC={fit.aic:.2f} -> {out_path}"
    )


@main.command()
@_config_option
@click.option("--a-file", required=True, type=str, help="CSV with a value column.")
@click.option("--b-file", required=True, type=str, help="CSV with a value column.")
@command_wrapper
def ttest(config_path, a_file, b_file):
    """Two-sided Welch t-test between two value files."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        def read_values(path):
            if not os.path.exists(path):
                raise MissingArtifactError(f"value file not found: {path}")
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or "value" not in reader.fieldnames:
                    raise InputFormatError(f"{path}: expected a value column")
                return [float(row["value"]) for row in reader]

        result = countreg.ttest_welch(read_values(a_file), read_values(b_file))
        out_path = cfg.artifact("ttest.json")
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(
                {"statistic": result.statistic, "df": result.df,
                 "p_value": result.p_value, "mean_a": result.mean_a,
                 "mean_b": result.mean_b}, fh, indent=2,
            )
        _write_meta(cfg, "ttest", [out_path])
    click.echo(
        f"ttest: t={result.statistic:.3f} df={result.df:.1f} "
        f"p={result.p_value:.4g} -> {out_path}"
    )


@main.group("synth")
def synth_group():
    """Synthetic-data commands."""


@synth_group.command("gen")
@_config_option
@command_wrapper
def synth_gen(config_path):
    """Generate a synthetic corpus with gold labels into the output dir."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        scfg = synth.SynthConfig(seed=int(cfg.param("seed", 0)))
        corpus = synth.gen_corpus(scfg)
        paths = synth.write_corpus(corpus, cfg.output_dir)
        _write_meta(cfg, "synth gen", list(paths.values()))
    click.echo(
        f"synth gen: {len(corpus.notes)} notes, {len(corpus.gold_relations)} gold "
        f"candidates -> {cfg.output_dir}"
    )


@main.group()
def report():
    """Reporting commands."""


@report.command("forest")
@_config_option
@command_wrapper
def report_forest(config_path):
    """Format a Cox fit artifact as a forest-table CSV."""
    cfg = load_config(config_path)
    with _Lock(cfg.output_dir):
        cox_path = cfg.artifact("cox.json")
        if not os.path.exists(cox_path):
            raise MissingArtifactError(
                f"Cox fit not found: {cox_path} (run 'survival cox' first)"
            )
        with open(cox_path, encoding="utf-8") as fh:
            fit = json.load(fh)
        groups = fit.get("groups", {})
        terms = {t["term"]: t for t in fit.get("terms", [])}
        out_path = cfg.artifact("forest.csv")
        n_rows = 0
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["system", "n_patients", "n_events", "person_years",
                        "HR", "CI_low", "CI_high", "p"])
            for system in sorted(groups):
                g = groups[system]
                term = terms.get(f"implant_system={system}")
                if term is None:
                    hr = ci_lo = ci_hi = p = ""  # reference level
                else:
                    hr = f"{term['HR']:.3f}"
                    ci_lo = f"{term['CI_low']:.3f}"
                    ci_hi = f"{term['CI_high']:.3f}"
                    p = f"{term['p']:.4g}"
                w.writerow([system, g["n_patients"], g["n_events"],
                            f"{g['person_years']:.1f}", hr, ci_lo, ci_hi, p])
                n_rows += 1
        _write_meta(cfg, "report forest", [out_path])
    click.echo(f"report forest: {n_rows} rows -> {out_path}")


if __name__ == "__main__":
    main()
