"""Run zero-shot and few-shot evaluation over sampled tasks."""

from __future__ import annotations

import numpy as np
import torch

from .corpus import GraphTextCorpus
from .prompt import (
    PromptConfig,
    classify,
    few_shot_weights,
    frozen,
    prompt_tune,
    zero_shot_weights,
)
from .tasks import EvalReport, evaluate, sample_task

FEWSHOT_INITS = ("context", "random", "label-only")


def _node_embeddings(model, corpus):
    with frozen(model), torch.no_grad():
        return model.node_embeddings(corpus)


def zero_shot_report(model, corpus: GraphTextCorpus, *, tasks: int = 20, ways: int = 5, seed: int = 0,
                     template: str = "", query_cap: int | None = 200, name: str | None = None) -> EvalReport:
    """Classify the queries of ``tasks`` sampled 0-shot tasks with label-text prompts."""
    rng = np.random.default_rng(seed)
    z = _node_embeddings(model, corpus)
    classes = corpus.class_ids
    with frozen(model), torch.no_grad():
        weights = zero_shot_weights(model.text, corpus.vocab, [corpus.class_texts[c] for c in classes], template)
    row = {c: i for i, c in enumerate(classes)}
    report = EvalReport(name or ("zero-shot" + ("+template" if template.strip() else "")))
    for _ in range(tasks):
        task = sample_task(corpus, ways, 0, rng, query_cap)
        w = weights[[row[c] for c in task.class_ids]]
        _, pred = classify(z[task.query], w)
        report.add(*evaluate(pred.numpy(), task.query_labels, ways), task.query_capped)
    return report


def few_shot_report(model, corpus: GraphTextCorpus, *, shots: int, tasks: int = 20, ways: int = 5, seed: int = 0,
                    init: str = "context", prompt_config: PromptConfig | None = None,
                    query_cap: int | None = 200, name: str | None = None) -> EvalReport:
    """Sample ``shots``-shot tasks, tune a prompt per task and score the queries.

    ``init='label-only'`` skips tuning and classifies with the label text alone.
    """
    if shots < 1:
        raise ValueError("few-shot evaluation needs shots >= 1; use zero-shot evaluation for K = 0")
    if init not in FEWSHOT_INITS:
        raise ValueError(f"init must be one of {FEWSHOT_INITS}, got {init!r}")
    base = prompt_config or PromptConfig()
    cfg = PromptConfig(**{**base.__dict__, "init": init if init != "label-only" else base.init})
    rng = np.random.default_rng(seed)
    z = _node_embeddings(model, corpus)
    tokens = {c: corpus.class_tokens(c) for c in corpus.class_ids}
    report = EvalReport(name or f"{shots}-shot/{init}")
    for _ in range(tasks):
        task = sample_task(corpus, ways, shots, rng, query_cap)
        class_tokens = [tokens[c] for c in task.class_ids]
        prompt = None
        if init != "label-only":
            prompt = prompt_tune(model, corpus, task, cfg, rng, node_embeddings=z, class_tokens=class_tokens).prompt
        with frozen(model), torch.no_grad():
            if prompt is None:
                w = zero_shot_weights(model.text, corpus.vocab, [corpus.class_texts[c] for c in task.class_ids])
            else:
                w = few_shot_weights(model.text, prompt, class_tokens)
            _, pred = classify(z[task.query], w, cfg.logit_scale)
        report.add(*evaluate(pred.numpy(), task.query_labels, ways), task.query_capped)
    return report
