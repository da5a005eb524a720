"""Pixel matching operations.

Every map value is the biased similarity

    1 - 2 / (1 + exp(||e_p - e_q||^2 + b))

minimized over a candidate pixel set, where b is the trainable
foreground or background bias. Values live in (-1, 1); an empty
candidate set yields exactly 1 ("no evidence"). The exponent argument
is clamped to +/-50 before exp so large distances saturate instead of
overflowing.

The min-reduction runs in a compiled kernel (see ``backend``); its
gradient is routed analytically to the minimizing embedding pair, with
ties resolved to the first minimizer in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import torch
from torch import Tensor

from ..errors import InvalidConfigError, InvalidInputError
from . import backend

EXP_CLAMP = 50.0

DEFAULT_WINDOWS = (2, 4, 6, 8, 10, 12)


class BiasPair(NamedTuple):
    """Trainable foreground/background distance offsets (init to 0)."""

    fg: Tensor
    bg: Tensor


@dataclass
class MatchMaps:
    """Per-object matching maps, all spatially aligned to the embedding.

    ``local_*`` stack one map per window radius. Background maps are
    None when background matching is disabled.
    """

    global_fg: Tensor
    global_bg: Tensor | None
    local_fg: Tensor
    local_bg: Tensor | None


def validate_windows(radii: Sequence[int]) -> tuple[int, ...]:
    ks = tuple(int(k) for k in radii)
    if not ks:
        raise InvalidConfigError("window set must be non-empty")
    if any(k <= 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise InvalidConfigError(
            f"window radii must be strictly increasing positive integers, got {ks}"
        )
    return ks


def pairwise_distance(e_p: Tensor, e_q: Tensor, bias) -> Tensor:
    """Biased similarity between two embeddings (last dim = channels)."""
    e_p = torch.as_tensor(e_p)
    e_q = torch.as_tensor(e_q)
    d2 = ((e_p - e_q) ** 2).sum(dim=-1)
    u = torch.clamp(d2 + bias, -EXP_CLAMP, EXP_CLAMP)
    return 1.0 - 2.0 / (1.0 + torch.exp(u))


def _biased_similarity(min_d2: Tensor, arg: Tensor, bias) -> Tensor:
    u = torch.clamp(min_d2 + bias, -EXP_CLAMP, EXP_CLAMP)
    sim = 1.0 - 2.0 / (1.0 + torch.exp(u))
    return torch.where(arg >= 0, sim, torch.ones_like(sim))


def _to_kernel(t: Tensor):
    return t.detach().contiguous().cpu().numpy()


class _GlobalMinSq(torch.autograd.Function):
    """min_q ||cur_p - ref_q||^2 over the fg and bg sets of ref."""

    @staticmethod
    def forward(ctx, cur: Tensor, ref: Tensor, fg: Tensor):
        k = backend.kernels()
        min_fg, arg_fg, min_bg, arg_bg = k.global_min_sqdist(
            _to_kernel(cur), _to_kernel(ref), _to_kernel(fg)
        )
        t_min_fg = torch.from_numpy(min_fg)
        t_arg_fg = torch.from_numpy(arg_fg)
        t_min_bg = torch.from_numpy(min_bg)
        t_arg_bg = torch.from_numpy(arg_bg)
        ctx.save_for_backward(cur, ref, t_arg_fg, t_arg_bg)
        ctx.mark_non_differentiable(t_arg_fg, t_arg_bg)
        return t_min_fg, t_arg_fg, t_min_bg, t_arg_bg

    @staticmethod
    def backward(ctx, g_min_fg, _g_arg_fg, g_min_bg, _g_arg_bg):
        cur, ref, arg_fg, arg_bg = ctx.saved_tensors
        c = cur.shape[-1]
        g_cur = torch.zeros_like(cur)
        g_ref = torch.zeros_like(ref)
        cur_flat = cur.reshape(-1, c)
        ref_flat = ref.reshape(-1, c)
        g_cur_flat = g_cur.view(-1, c)
        g_ref_flat = g_ref.view(-1, c)
        for g, arg in ((g_min_fg, arg_fg), (g_min_bg, arg_bg)):
            if g is None:
                continue
            a = arg.reshape(-1)
            valid = a >= 0
            if not bool(valid.any()):
                continue
            p_idx = valid.nonzero(as_tuple=True)[0]
            q_idx = a[p_idx]
            diff = cur_flat[p_idx] - ref_flat[q_idx]
            contrib = (2.0 * g.reshape(-1)[p_idx]).unsqueeze(1) * diff
            g_cur_flat.index_add_(0, p_idx, contrib)
            g_ref_flat.index_add_(0, q_idx, -contrib)
        return g_cur, g_ref, None


class _LocalMinSq(torch.autograd.Function):
    """Windowed min squared distances for every radius in one pass."""

    @staticmethod
    def forward(ctx, cur: Tensor, prev: Tensor, fg: Tensor, radii: tuple[int, ...]):
        k = backend.kernels()
        min_fg, arg_fg, min_bg, arg_bg = k.local_min_sqdist(
            _to_kernel(cur), _to_kernel(prev), _to_kernel(fg), radii
        )
        t_min_fg = torch.from_numpy(min_fg)
        t_arg_fg = torch.from_numpy(arg_fg)
        t_min_bg = torch.from_numpy(min_bg)
        t_arg_bg = torch.from_numpy(arg_bg)
        ctx.save_for_backward(cur, prev, t_arg_fg, t_arg_bg)
        ctx.mark_non_differentiable(t_arg_fg, t_arg_bg)
        return t_min_fg, t_arg_fg, t_min_bg, t_arg_bg

    @staticmethod
    def backward(ctx, g_min_fg, _g_arg_fg, g_min_bg, _g_arg_bg):
        cur, prev, arg_fg, arg_bg = ctx.saved_tensors
        c = cur.shape[-1]
        p_total = cur.shape[0] * cur.shape[1]
        g_cur = torch.zeros_like(cur)
        g_prev = torch.zeros_like(prev)
        cur_flat = cur.reshape(-1, c)
        prev_flat = prev.reshape(-1, c)
        g_cur_flat = g_cur.view(-1, c)
        g_prev_flat = g_prev.view(-1, c)
        base = torch.arange(p_total, device=cur.device)
        for g, arg in ((g_min_fg, arg_fg), (g_min_bg, arg_bg)):
            if g is None:
                continue
            n = arg.shape[0]
            a = arg.reshape(n, p_total)
            gf = g.reshape(n, p_total)
            valid = a >= 0
            if not bool(valid.any()):
                continue
            p_idx = base.expand(n, p_total)[valid]
            q_idx = a[valid]
            diff = cur_flat[p_idx] - prev_flat[q_idx]
            contrib = (2.0 * gf[valid]).unsqueeze(1) * diff
            g_cur_flat.index_add_(0, p_idx, contrib)
            g_prev_flat.index_add_(0, q_idx, -contrib)
        return g_cur, g_prev, None, None


def _check_embeddings(a: Tensor, b: Tensor, what: str) -> None:
    if a.dim() != 3 or b.dim() != 3:
        raise InvalidInputError(f"{what}: embeddings must be (C, h, w)")
    if a.shape[0] != b.shape[0]:
        raise InvalidInputError(
            f"{what}: channel mismatch {a.shape[0]} vs {b.shape[0]}"
        )


def global_match(
    cur_emb: Tensor,
    ref_emb: Tensor,
    ref_fg: Tensor,
    ref_bg: Tensor,
    biases: BiasPair,
) -> tuple[Tensor, Tensor]:
    """Min biased similarity of every current pixel to the reference sets.

    ``ref_fg``/``ref_bg`` are boolean masks over the reference grid (the
    relative background carries every pixel not labeled the object,
    other objects included). Empty sets give a map of exactly 1.
    """
    _check_embeddings(cur_emb, ref_emb, "global_match")
    if ref_fg.shape != ref_emb.shape[1:] or ref_bg.shape != ref_emb.shape[1:]:
        raise InvalidInputError("global_match: mask shape mismatch")
    fg = ref_fg.bool()
    # The kernel scans bg as the complement of fg, so the two masks must
    # partition the reference grid (split_pixel_sets guarantees this).
    if not bool((ref_bg.bool() == ~fg).all()):
        raise InvalidInputError("global_match: fg/bg masks must partition the grid")
    cur = cur_emb.permute(1, 2, 0)
    ref = ref_emb.permute(1, 2, 0)
    min_fg, arg_fg, min_bg, arg_bg = _GlobalMinSq.apply(cur, ref, fg)
    fg_map = _biased_similarity(min_fg, arg_fg, biases.fg)
    bg_map = _biased_similarity(min_bg, arg_bg, biases.bg)
    return fg_map, bg_map


def multi_local_match(
    cur_emb: Tensor,
    prev_emb: Tensor,
    prev_label: Tensor,
    object_id: int,
    radii: Sequence[int],
    biases: BiasPair,
) -> tuple[Tensor, Tensor]:
    """Windowed fg/bg matching against the previous frame at all radii.

    The squared-distance volume is computed once for the largest radius
    and every smaller window reduces over it, so adding radii is cheap.
    Returns (local_fg, local_bg), each (n, h, w).
    """
    _check_embeddings(cur_emb, prev_emb, "multi_local_match")
    if prev_label.shape != prev_emb.shape[1:]:
        raise InvalidInputError("multi_local_match: label shape mismatch")
    ks = validate_windows(radii)
    cur = cur_emb.permute(1, 2, 0)
    prev = prev_emb.permute(1, 2, 0)
    fg = prev_label == int(object_id)
    min_fg, arg_fg, min_bg, arg_bg = _LocalMinSq.apply(cur, prev, fg, ks)
    local_fg = _biased_similarity(min_fg, arg_fg, biases.fg)
    local_bg = _biased_similarity(min_bg, arg_bg, biases.bg)
    return local_fg, local_bg


def assemble_pixel_guidance(
    cur_emb: Tensor,
    prev_emb: Tensor,
    prev_mask: Tensor,
    maps: MatchMaps,
) -> Tensor:
    """Concatenate the pixel-level guidance channels for one object.

    Channel order is fixed: current embedding, previous embedding,
    previous object mask, local fg maps (ascending radius), local bg
    maps, global fg map, global bg map. Background slots are skipped
    when the maps carry None there. With C embedding channels and n
    radii this yields 2C + 1 + 2n + 2 channels.
    """
    h, w = cur_emb.shape[1:]
    pieces = [cur_emb, prev_emb, prev_mask.unsqueeze(0), maps.local_fg]
    if maps.local_bg is not None:
        pieces.append(maps.local_bg)
    pieces.append(maps.global_fg.unsqueeze(0))
    if maps.global_bg is not None:
        pieces.append(maps.global_bg.unsqueeze(0))
    for t in pieces:
        if t.shape[-2:] != (h, w):
            raise InvalidInputError(
                f"guidance pieces misaligned: {tuple(t.shape[-2:])} vs {(h, w)}"
            )
    return torch.cat(pieces, dim=0)


def guidance_channels(embedding_dim: int, n_windows: int, use_background: bool = True) -> int:
    """Channel count produced by :func:`assemble_pixel_guidance`."""
    if use_background:
        return 2 * embedding_dim + 1 + 2 * n_windows + 2
    return 2 * embedding_dim + 1 + n_windows + 1
