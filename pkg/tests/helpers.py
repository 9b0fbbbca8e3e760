"""Shared independent oracles and fixture builders.

Everything here recomputes expected values from first principles (finite
differences, exhaustive enumeration, brute-force tallies) and never calls
the code path under test.
"""

from __future__ import annotations

import math
from collections import Counter
from datetime import datetime, timezone

import torch

from vte.annotation import AnnotationRecord, Submission
from vte.corpus import Instance, Label, Source


# ------------------------------------------------------------ gradients


def finite_difference_grads(loss_fn, params, step=1e-6):
    """Central finite differences of a scalar loss over parameter tensors."""
    grads = []
    with torch.no_grad():
        for param in params:
            flat = param.view(-1)
            grad = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                plus = float(loss_fn())
                flat[i] = orig - step
                minus = float(loss_fn())
                flat[i] = orig
                grad[i] = (plus - minus) / (2.0 * step)
            grads.append(grad.view_as(param))
    return grads


def analytic_grads(loss_fn, params):
    for param in params:
        param.grad = None
    loss = loss_fn()
    loss.backward()
    return [
        param.grad.detach().clone()
        if param.grad is not None
        else torch.zeros_like(param)
        for param in params
    ]


def max_relative_error(analytic, numeric, floor=1e-4) -> float:
    """Worst element-wise relative error; entries below ``floor`` are in
    effect held to an absolute tolerance of floor * threshold, well above
    central-difference noise (~1e-10) but far below any wrong-formula error."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = torch.clamp(torch.maximum(a.abs(), n.abs()), min=floor)
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def norm_relative_error(analytic, numeric) -> float:
    """Global L2-norm relative error over all parameters."""
    diff = math.sqrt(sum(float(((a - n) ** 2).sum()) for a, n in zip(analytic, numeric)))
    scale = max(
        math.sqrt(sum(float((a**2).sum()) for a in analytic)),
        math.sqrt(sum(float((n**2).sum()) for n in numeric)),
        1e-12,
    )
    return diff / scale


# ----------------------------------------------------------- beam oracle


def exhaustive_best_sequence(decoder, vocab, f, label, max_len):
    """Argmax over every token sequence of length <= max_len by full
    enumeration; scores accumulate left to right exactly as decoding does."""
    end_id = vocab.end_id
    best = []  # (score, ids)

    with torch.no_grad():
        logprobs, state = decoder.advance_prefix(f, vocab, label)

        def dfs(ids, score, logprobs, state, depth):
            row = logprobs
            if depth == max_len:
                best.append((score, ids))
                return
            best.append((score + float(row[end_id]), ids))
            for token_id in range(len(vocab)):
                if token_id == end_id:
                    continue
                tokens = torch.tensor([token_id], dtype=torch.long)
                next_logprobs, next_state = decoder.step(tokens, state)
                dfs(
                    ids + (token_id,),
                    score + float(row[token_id]),
                    next_logprobs[0],
                    next_state,
                    depth + 1,
                )

        dfs((), 0.0, logprobs, state, 0)
    return min(best, key=lambda item: (-item[0], item[1]))[1]


def greedy_decode(decoder, vocab, f, label, max_len):
    """Step-wise argmax decoding, independent of the beam implementation."""
    end_id = vocab.end_id
    ids = []
    with torch.no_grad():
        logprobs, state = decoder.advance_prefix(f, vocab, label)
        for _ in range(max_len):
            token_id = int(torch.argmax(logprobs))
            if token_id == end_id:
                break
            ids.append(token_id)
            logprobs, state = decoder.step(
                torch.tensor([token_id], dtype=torch.long), state
            )
            logprobs = logprobs[0]
    return tuple(ids)


# -------------------------------------------------------- majority oracle


def brute_force_outcome(labels):
    """Independent majority/ambiguity decision over exactly three labels."""
    counts = Counter(labels)
    top_label, top = counts.most_common(1)[0]
    if top >= 2:
        return top_label, top
    return None, None


# ------------------------------------------------------ fixture builders


def make_instance(pair_id, tokens, label, image_id=None, explanations=(), source=Source.ORIGINAL):
    return Instance(
        pair_id=pair_id,
        image_id=image_id or f"{pair_id}.jpg",
        hypothesis=tuple(tokens),
        label=label,
        explanations=tuple(explanations),
        source=source,
    )


def make_record(pair_id, worker_id, label, highlighted=(0,), explanation="looks like it", ts=None):
    return AnnotationRecord(
        pair_id=pair_id,
        worker_id=worker_id,
        label=label,
        highlighted=frozenset(highlighted),
        explanation=explanation,
        timestamp=ts or datetime(2026, 8, 1, 12, 0, 0, tzinfo=timezone.utc),
    )


def valid_submission_for(instance, worker_id, label=None):
    """A submission that passes every validation rule for this instance."""
    token = instance.hypothesis[0]
    return Submission(
        pair_id=instance.pair_id,
        worker_id=worker_id,
        label=label or instance.label,
        highlighted=(0,),
        explanation=f"the {token.lower().strip('.,!?')} is the important part here",
    )


def submissions_for_batch(batch, worker_id, wrong_trusted=False, break_item=None):
    """Valid submissions for all 10 items; optionally mislabel the trusted
    item or blank out one item's highlights."""
    subs = []
    for index, instance in enumerate(batch.items):
        label = instance.label
        if wrong_trusted and index == batch.trusted_position:
            label = next(l for l in Label if l is not instance.label)
        sub = valid_submission_for(instance, worker_id, label)
        if break_item is not None and index == break_item:
            sub = Submission(
                pair_id=sub.pair_id,
                worker_id=worker_id,
                label=sub.label,
                highlighted=(),
                explanation=sub.explanation,
            )
        subs.append(sub)
    return subs
