"""Paraphrase pipeline: encode, decode candidates, score, select."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .decoding import BeamSearchConfig, diverse_beam_search
from .metrics import DEFAULT_BETA, sbert_ibleu
from .tokenization import Vocabulary, normalize

logger = logging.getLogger(__name__)

THREADS_ENV = "SMCLM_THREADS"


@dataclass
class CandidateSet:
    """Candidates for one source with their selection scores."""

    source: str
    candidates: list[str]
    scores: list[float]
    best: int

    def best_candidate(self) -> str:
        return self.candidates[self.best]

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "candidates": self.candidates,
            "scores": self.scores,
            "best": self.best,
        }


@dataclass
class PipelineConfig:
    beam: BeamSearchConfig = field(default_factory=BeamSearchConfig)
    beta: float = DEFAULT_BETA
    skip_errors: bool = False  # batch mode: skip-and-log instead of fail-fast


def paraphrase(model, vocab: Vocabulary, encoder, source: str, cfg: PipelineConfig) -> CandidateSet:
    """Generate candidates for one source and select the best.

    Selection maximizes SBERT-iBLEU against the source under the pipeline's
    encoder and beta; ties go to the earliest candidate, and a candidate equal
    to the source scores 0 through the combine limit. Candidates that
    detokenize to nothing score 0 without touching the encoder.
    """
    injection = encoder.encode(source)
    hypotheses = diverse_beam_search(model, injection, cfg.beam)
    if not hypotheses:
        raise RuntimeError(f"decoder produced no hypotheses for {source!r}")
    candidates = [vocab.detokenize(h.tokens) for h in hypotheses]
    scores = [
        0.0 if not normalize(c) else sbert_ibleu(source, c, encoder, cfg.beta) for c in candidates
    ]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return CandidateSet(source=source, candidates=candidates, scores=scores, best=best)


def paraphrase_batch(
    model, vocab: Vocabulary, encoder, sources: list[str], cfg: PipelineConfig
) -> list[CandidateSet]:
    """paraphrase() over many sources, order-preserving.

    Failures raise unless cfg.skip_errors, in which case the failing source is
    logged and dropped. SMCLM_THREADS > 1 runs sources on a thread pool;
    results are reassembled by index so the output matches the serial run.
    """
    workers = _worker_count()

    def run(item):
        idx, source = item
        try:
            return idx, paraphrase(model, vocab, encoder, source, cfg), None
        except Exception as e:  # noqa: BLE001 - per-source isolation in batch mode
            if not cfg.skip_errors:
                raise
            return idx, None, e

    items = list(enumerate(sources))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, items))
    else:
        outcomes = [run(it) for it in items]
    outcomes.sort(key=lambda o: o[0])
    results = []
    for idx, cs, err in outcomes:
        if err is not None:
            logger.warning("skipping source %d (%r): %s", idx, sources[idx], err)
            continue
        results.append(cs)
    return results


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def write_candidates_jsonl(sets: list[CandidateSet], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for cs in sets:
            f.write(json.dumps(cs.to_dict()) + "\n")


def read_candidates_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON: {e}") from None
    return records
