"""Compiled inner loops for world stepping, lane changes, rewards, rollouts.

These kernels are the single source of truth for the hot path: the public
stepping API and the Monte Carlo rollouts both call the same functions, so a
zero-noise rollout reproduces the main trajectory bit for bit. Everything is
sequential and exact (no fastmath, no parallel scheduling), which keeps runs
reproducible across processes and worker counts.

Vehicle counts are small (tens), so leader search and collision detection
are brute-force O(n^2) loops; compiled, these cost microseconds per substep.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Gaps at or below this are floored before entering the car-following law;
# the squared-ratio term then saturates at the braking clamp.
GAP_FLOOR = 1e-6


@njit(cache=True, nogil=True)
def _idm(v, has_leader, gap, lead_v, v0, headway, min_gap, amax, bcomf, dexp, max_brake):
    acc = amax * (1.0 - (v / v0) ** dexp)
    if has_leader:
        g = gap if gap > GAP_FLOOR else GAP_FLOOR
        dynamic = v * headway + v * (v - lead_v) / (2.0 * math.sqrt(amax * bcomf))
        s_star = min_gap + (dynamic if dynamic > 0.0 else 0.0)
        acc -= amax * (s_star / g) ** 2
    if acc > amax:
        acc = amax
    if acc < -max_brake:
        acc = -max_brake
    return acc


@njit(cache=True, nogil=True)
def advance_substeps(
    pos, vel, lanes, lengths, crashed,
    v0, headway, min_gap, amax, bcomf, dexp,
    ring, dt, n_substeps,
    noise, noise_exempt, max_brake,
    collision_pairs,
):
    """Run physics substeps in place; returns the number of new collisions.

    Each substep: accelerations from the current snapshot (car-following
    against the same-lane leader, crashed vehicles braking to rest, optional
    additive noise for non-exempt vehicles), semi-implicit Euler integration
    with speeds clamped at zero, then same-lane overlap detection. Newly
    overlapping pairs are flagged crashed and recorded into
    ``collision_pairs`` in (substep, low id) order.
    """
    n = pos.shape[0]
    n_collisions = 0
    accel = np.empty(n)
    for k in range(n_substeps):
        for i in range(n):
            if crashed[i]:
                accel[i] = -max_brake if vel[i] > 0.0 else 0.0
                continue
            best = 1e18
            leader = -1
            for j in range(n):
                if j == i or lanes[j] != lanes[i]:
                    continue
                d = (pos[j] - pos[i]) % ring
                if d <= 0.0:
                    d = ring
                if d < best:
                    best = d
                    leader = j
            if leader >= 0:
                gap = best - 0.5 * (lengths[i] + lengths[leader])
                a = _idm(vel[i], True, gap, vel[leader],
                         v0[i], headway[i], min_gap[i], amax[i], bcomf[i], dexp[i],
                         max_brake)
            else:
                a = _idm(vel[i], False, 0.0, 0.0,
                         v0[i], headway[i], min_gap[i], amax[i], bcomf[i], dexp[i],
                         max_brake)
            if not noise_exempt[i]:
                a = a + noise[k, i]
                if a < -max_brake:
                    a = -max_brake
            accel[i] = a
        for i in range(n):
            v = vel[i] + accel[i] * dt
            if v < 0.0:
                v = 0.0
            vel[i] = v
            pos[i] = (pos[i] + v * dt) % ring
        for i in range(n):
            for j in range(i + 1, n):
                if lanes[i] != lanes[j]:
                    continue
                if crashed[i] and crashed[j]:
                    continue
                d = (pos[j] - pos[i]) % ring
                if d > 0.5 * ring:
                    d = ring - d
                if d < 0.5 * (lengths[i] + lengths[j]):
                    if n_collisions < collision_pairs.shape[0]:
                        collision_pairs[n_collisions, 0] = i
                        collision_pairs[n_collisions, 1] = j
                        n_collisions += 1
                    crashed[i] = True
                    crashed[j] = True
    return n_collisions


@njit(cache=True, nogil=True)
def _candidate_eval(
    i, cand,
    pos, vel, lanes, lengths, crashed,
    v0, headway, min_gap, amax, bcomf, dexp,
    politeness_i, gain_th_i, b_safe_i,
    ring, max_brake,
):
    """Safety/incentive evaluation of vehicle i moving into lane ``cand``.

    Returns (decision, overlap, incentive). ``overlap`` marks a vehicle
    already alongside in the target lane, an absolute veto.
    """
    n = pos.shape[0]
    own = lanes[i]
    nl = -1
    nf = -1
    ol = -1
    of = -1
    nld = 1e18
    nfd = 1e18
    old_d = 1e18
    ofd = 1e18
    for j in range(n):
        if j == i:
            continue
        lj = lanes[j]
        if lj != cand and lj != own:
            continue
        delta = (pos[j] - pos[i]) % ring
        if delta > 0.5 * ring:
            delta -= ring
        if lj == cand:
            if abs(delta) < 0.5 * (lengths[i] + lengths[j]):
                return False, True, -1e18
            if delta > 0.0:
                if delta < nld:
                    nld = delta
                    nl = j
            else:
                if -delta < nfd:
                    nfd = -delta
                    nf = j
        else:
            if delta > 0.0:
                if delta < old_d:
                    old_d = delta
                    ol = j
            elif delta < 0.0:
                if -delta < ofd:
                    ofd = -delta
                    of = j

    safe = True
    gain_others = 0.0
    if nf >= 0:
        gap_after = (pos[i] - pos[nf]) % ring - 0.5 * (lengths[nf] + lengths[i])
        # Safety reads the raw demand (unclamped probe); the incentive term
        # below uses the physically clamped acceleration.
        demanded = _idm(vel[nf], True, gap_after, vel[i],
                        v0[nf], headway[nf], min_gap[nf], amax[nf], bcomf[nf],
                        dexp[nf], 1e9)
        if demanded < -b_safe_i:
            safe = False
        follower_after = _idm(vel[nf], True, gap_after, vel[i],
                              v0[nf], headway[nf], min_gap[nf], amax[nf], bcomf[nf],
                              dexp[nf], max_brake)
        if nl >= 0:
            gap_before = (pos[nl] - pos[nf]) % ring - 0.5 * (lengths[nf] + lengths[nl])
            follower_before = _idm(vel[nf], True, gap_before, vel[nl],
                                   v0[nf], headway[nf], min_gap[nf], amax[nf], bcomf[nf],
                                   dexp[nf], max_brake)
        else:
            follower_before = _idm(vel[nf], False, 0.0, 0.0,
                                   v0[nf], headway[nf], min_gap[nf], amax[nf], bcomf[nf],
                                   dexp[nf], max_brake)
        gain_others += follower_after - follower_before

    if ol >= 0:
        gap = old_d - 0.5 * (lengths[i] + lengths[ol])
        a_self_before = _idm(vel[i], True, gap, vel[ol],
                             v0[i], headway[i], min_gap[i], amax[i], bcomf[i], dexp[i],
                             max_brake)
    else:
        a_self_before = _idm(vel[i], False, 0.0, 0.0,
                             v0[i], headway[i], min_gap[i], amax[i], bcomf[i], dexp[i],
                             max_brake)
    if nl >= 0:
        gap = nld - 0.5 * (lengths[i] + lengths[nl])
        a_self_after = _idm(vel[i], True, gap, vel[nl],
                            v0[i], headway[i], min_gap[i], amax[i], bcomf[i], dexp[i],
                            max_brake)
    else:
        a_self_after = _idm(vel[i], False, 0.0, 0.0,
                            v0[i], headway[i], min_gap[i], amax[i], bcomf[i], dexp[i],
                            max_brake)
    gain_self = a_self_after - a_self_before

    if of >= 0:
        gap = (pos[i] - pos[of]) % ring - 0.5 * (lengths[of] + lengths[i])
        of_before = _idm(vel[of], True, gap, vel[i],
                         v0[of], headway[of], min_gap[of], amax[of], bcomf[of], dexp[of],
                         max_brake)
        if ol >= 0:
            gap = (pos[ol] - pos[of]) % ring - 0.5 * (lengths[of] + lengths[ol])
            of_after = _idm(vel[of], True, gap, vel[ol],
                            v0[of], headway[of], min_gap[of], amax[of], bcomf[of], dexp[of],
                            max_brake)
        else:
            of_after = _idm(vel[of], False, 0.0, 0.0,
                            v0[of], headway[of], min_gap[of], amax[of], bcomf[of], dexp[of],
                            max_brake)
        gain_others += of_after - of_before

    incentive = gain_self + politeness_i * gain_others
    return (safe and incentive > gain_th_i), False, incentive


@njit(cache=True, nogil=True)
def lane_change_pass(
    pos, vel, lanes, lengths, crashed, cooldowns,
    v0, headway, min_gap, amax, bcomf, dexp, politeness, gain_th, b_safe, cd_steps,
    lane_count, ring,
    flip_u, flip_prob, noise_exempt,
    max_brake,
):
    """One lane-change round: evaluate all vehicles, then apply changes.

    Cooldowns tick down first. Decisions are evaluated in ascending id order
    against the unchanged state and applied simultaneously afterwards; when
    two accepted changes target the same lane within one vehicle length, the
    lower id wins. ``flip_prob`` randomly inverts decisions of non-exempt
    vehicles (rollout uncertainty about other drivers); a flip can never
    override the alongside-overlap veto. Returns the number of changes.
    """
    n = pos.shape[0]
    proposals = np.full(n, -1, dtype=np.int64)
    best_inc = np.full(n, -1e18)
    for i in range(n):
        if cooldowns[i] > 0:
            cooldowns[i] -= 1
    for i in range(n):
        if crashed[i] or cooldowns[i] > 0:
            continue
        for slot in range(2):
            cand = lanes[i] - 1 if slot == 0 else lanes[i] + 1
            if cand < 0 or cand >= lane_count:
                continue
            decision, overlap, incentive = _candidate_eval(
                i, cand, pos, vel, lanes, lengths, crashed,
                v0, headway, min_gap, amax, bcomf, dexp,
                politeness[i], gain_th[i], b_safe[i],
                ring, max_brake,
            )
            if flip_prob > 0.0 and not noise_exempt[i]:
                if flip_u[i, slot] < flip_prob:
                    decision = not decision
            if overlap:
                decision = False
            if decision and incentive > best_inc[i]:
                best_inc[i] = incentive
                proposals[i] = cand
    for i in range(n):
        if proposals[i] < 0:
            continue
        for h in range(i):
            if proposals[h] == proposals[i]:
                d = (pos[i] - pos[h]) % ring
                if d > 0.5 * ring:
                    d = ring - d
                limit = lengths[i] if lengths[i] > lengths[h] else lengths[h]
                if d < limit:
                    proposals[i] = -1
                    break
    n_changes = 0
    for i in range(n):
        if proposals[i] >= 0:
            lanes[i] = proposals[i]
            cooldowns[i] = cd_steps[i]
            n_changes += 1
    return n_changes


@njit(cache=True, nogil=True)
def ego_rewards(
    pos, vel, lanes, crashed, ego_idx, ring,
    peak, width, v_target, kappa, lam, zeta, rdmax, radius,
    w_speed, w_defensive, w_collision,
    out_rs, out_rc, out_rd, out_loss,
):
    """Reward components and loss for the given vehicle indices."""
    n = pos.shape[0]
    for e in range(ego_idx.shape[0]):
        j = ego_idx[e]
        z = (vel[j] - v_target) / width
        rs = peak * math.exp(-0.5 * z * z)
        rc = -kappa if crashed[j] else 0.0
        pen = 0.0
        for i in range(n):
            if i == j:
                continue
            delta = (pos[i] - pos[j]) % ring
            if delta > 0.5 * ring:
                delta -= ring
            d = abs(delta)
            if d > radius:
                continue
            if d == 0.0:
                raise ValueError("zero along-track distance between scored vehicles")
            if delta > 0.0:
                closing = vel[j] - vel[i]
            else:
                closing = vel[i] - vel[j]
            if closing < 0.0:
                closing = 0.0
            m = lanes[i] - lanes[j]
            if m < 0:
                m = -m
            pen += (closing * closing + zeta) / (2.0**m * d)
        rd = rdmax - lam * pen
        if rd < 0.0:
            rd = 0.0
        if rd > rdmax:
            rd = rdmax
        shat = rs / peak if peak > 0.0 else 0.0
        dhat = rd / rdmax
        chat = rc / kappa if kappa > 0.0 else 0.0
        out_rs[e] = rs
        out_rc[e] = rc
        out_rd[e] = rd
        out_loss[e] = -(w_speed * shat + w_defensive * dhat + w_collision * chat)


@njit(cache=True, nogil=True)
def run_rollout(
    pos, vel, lanes, lengths, crashed, cooldowns,
    v0, headway, min_gap, amax, bcomf, dexp, politeness, gain_th, b_safe, cd_steps,
    ego_idx, lane_count, ring, dt, n_substeps,
    tau, gamma,
    peak, width, v_target, kappa, lam, zeta, rdmax, radius,
    w_speed, w_defensive, w_collision,
    noise, flip_u, flip_prob, noise_exempt, max_brake,
    disc_loss, undisc_loss,
):
    """Roll the (already copied) arrays ``tau`` world steps, accumulating loss.

    Per world step the order matches the main stepping path exactly:
    physics substeps, lane-change round, rewards. Discounted losses
    accumulate per scored vehicle as ``sum_t gamma^t * loss_t`` in time
    order; undiscounted sums accumulate alongside. Termination rules are
    not applied: rollouts are physics previews.
    """
    n_ego = ego_idx.shape[0]
    n = pos.shape[0]
    for e in range(n_ego):
        disc_loss[e] = 0.0
        undisc_loss[e] = 0.0
    rs = np.empty(n_ego)
    rc = np.empty(n_ego)
    rd = np.empty(n_ego)
    loss = np.empty(n_ego)
    pair_buf = np.empty((n * n, 2), dtype=np.int64)
    weight = 1.0
    for t in range(tau):
        advance_substeps(
            pos, vel, lanes, lengths, crashed,
            v0, headway, min_gap, amax, bcomf, dexp,
            ring, dt, n_substeps,
            noise[t * n_substeps:(t + 1) * n_substeps], noise_exempt, max_brake,
            pair_buf,
        )
        lane_change_pass(
            pos, vel, lanes, lengths, crashed, cooldowns,
            v0, headway, min_gap, amax, bcomf, dexp, politeness, gain_th, b_safe, cd_steps,
            lane_count, ring,
            flip_u[t], flip_prob, noise_exempt,
            max_brake,
        )
        ego_rewards(
            pos, vel, lanes, crashed, ego_idx, ring,
            peak, width, v_target, kappa, lam, zeta, rdmax, radius,
            w_speed, w_defensive, w_collision,
            rs, rc, rd, loss,
        )
        for e in range(n_ego):
            disc_loss[e] += weight * loss[e]
            undisc_loss[e] += loss[e]
        weight *= gamma
