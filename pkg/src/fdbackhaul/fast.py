"""Batched per-slot mode evaluation used by the simulation engine.

Implements the same decision rule as :func:`fdbackhaul.scheduler.select_mode`
but keeps every per-mode step inside compiled code. Modes are visited in
decreasing order of the score upper bound ``sum_l W_l * B * cap`` so that
the scan can stop once no remaining mode can beat the incumbent; this
pruning is exact.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import _gp_kernel as kernel
from .modes import ADL, AUL, BDL, BUL, CELL_LINKS, CellMode, TransmissionMode, expand_links
from .power import FORMS, INITS
from .scenario import ChannelState, NodeKind, ScenarioConfig
from .scheduler import SchedulerOptions, ScheduleDecision, differentials, fda_flows

KINDS = {BDL: 0, BUL: 1, ADL: 2, AUL: 3}
FDA_DL, FDA_UL = 4, 5
PER_CELL = 6


def _cand(cell: int, kind: int) -> int:
    return PER_CELL * cell + kind


@njit(cache=True)
def assemble(m, mode_cand, mode_n, mode_rx, mode_tx, mode_ntx, cand_tx, cand_rx, cand_cell,
             cand_noise, cand_pmax, Gs, rx_gain, tx_gain, gamma_m, gamma_s):
    """Gain matrix, noise and power budgets of mode ``m`` (see ``modes.cross_gain``)."""
    k = mode_n[m]
    G = np.empty((k, k))
    noise = np.empty(k)
    pmax = np.empty(k)
    for a in range(k):
        ca = mode_cand[m, a]
        r = cand_rx[ca]
        noise[a] = cand_noise[ca]
        pmax[a] = cand_pmax[ca] / mode_ntx[m] if cand_tx[ca] == -1 else cand_pmax[ca]
        for b in range(k):
            cb = mode_cand[m, b]
            t = cand_tx[cb]
            if r == -1:
                G[a, b] = gamma_m if t == -1 else rx_gain[mode_rx[m], cand_cell[ca], t]
            elif t == -1:
                G[a, b] = tx_gain[mode_tx[m], cand_cell[cb], r]
            elif r == t:
                G[a, b] = gamma_s
            else:
                G[a, b] = Gs[r, t]
    return G, noise, pmax


@njit(cache=True)
def beam_table(H, masks, loads, printed, out):
    """MMSE beams for every cell subset in ``masks`` and their gains to all nodes.

    ``H[i]`` is node ``i``'s MBS channel (cells first), ``loads`` the per-cell
    loading ``p / sigma^2`` and ``out[mask, c, i] = |h_i^H b_c|^2``. Uses the
    same n x n reduction as ``beamforming._mmse``.
    """
    K, L = H.shape
    for mask in masks:
        cells = np.empty(H.shape[0], dtype=np.int64)
        n = 0
        c = 0
        while (mask >> c) > 0:
            if (mask >> c) & 1:
                cells[n] = c
                n += 1
            c += 1
        for k in range(n):
            A = np.empty((n, n), dtype=np.complex128)
            rhs = np.zeros(n, dtype=np.complex128)
            rhs[k] = 1.0
            for a in range(n):
                d = loads[cells[k]] if printed else loads[cells[a]]
                for b in range(n):
                    g = 0j
                    for j in range(L):
                        g += H[cells[a], j].conjugate() * H[cells[b], j]
                    A[a, b] = d * g + (1.0 if a == b else 0.0)
            coef = np.linalg.solve(A, rhs)
            x = np.zeros(L, dtype=np.complex128)
            for a in range(n):
                for j in range(L):
                    x[j] += coef[a] * H[cells[a], j]
            norm = 0.0
            for j in range(L):
                norm += x[j].real ** 2 + x[j].imag ** 2
            norm = math.sqrt(norm)
            for i in range(K):
                acc = 0j
                for j in range(L):
                    acc += H[i, j].conjugate() * x[j]
                out[mask, cells[k], i] = (acc.real ** 2 + acc.imag ** 2) / (norm * norm)


@njit(cache=True)
def evaluate_modes(order, bound, mode_cand, mode_n, mode_rx, mode_tx, mode_ntx,
                   cand_tx, cand_rx, cand_cell, cand_w, cand_noise, cand_pmax,
                   Gs, rx_gain, tx_gain, gamma_m, gamma_s, bandwidth, cap,
                   power_control, init_kind, pmin_frac, form, gp_cap, rel_tol, max_iter, newton_tol,
                   prune, scores, unconverged):
    """Equal-weight score of every mode that can still win; returns the
    argmax (lowest mode index on ties) or -1 when every score is zero."""
    best = 0.0
    best_idx = -1
    history = np.empty(max_iter + 1)
    for o in range(order.shape[0]):
        m = order[o]
        if bound[m] <= 0.0:
            break
        if prune and bound[m] < best:
            break
        k = mode_n[m]
        G, noise, pmax = assemble(m, mode_cand, mode_n, mode_rx, mode_tx, mode_ntx, cand_tx,
                                  cand_rx, cand_cell, cand_noise, cand_pmax, Gs, rx_gain, tx_gain,
                                  gamma_m, gamma_s)
        if power_control:
            p, iters, conv = kernel.optimize(G, noise, np.ones(k), pmax, init_kind, pmin_frac, form,
                                             gp_cap, rel_tol, max_iter, newton_tol, history)
            if not conv:
                unconverged[0] += 1
        else:
            p = pmax.copy()
        score = 0.0
        for a in range(k):
            sinr = G[a, a] * p[a] / kernel.interference(G, noise, p, a)
            score += cand_w[mode_cand[m, a]] * bandwidth * min(math.log2(1.0 + sinr), cap)
        scores[m] = score
        if score > best or (score == best and score > 0.0 and m < best_idx):
            best = score
            best_idx = m
    return best_idx


class BatchScheduler:
    """Per-profile mode tables plus the per-slot decision routine."""

    def __init__(self, modes, radio: ScenarioConfig, options: SchedulerOptions):
        self.modes = list(modes)
        self.radio = radio
        self.options = options.validate()
        ns = radio.num_cells
        self.num_cells = ns
        self.ues_per_cell = radio.ues_per_cell
        kmax = 2 * ns
        M = len(self.modes)
        self.mode_cand = np.full((M, kmax), -1, dtype=np.int64)
        self.mode_n = np.zeros(M, dtype=np.int64)
        self.mode_rx = np.zeros(M, dtype=np.int64)
        self.mode_tx = np.zeros(M, dtype=np.int64)
        self.mode_ntx = np.ones(M, dtype=np.int64)
        self.mode_has_fda = np.zeros(M, dtype=bool)
        for i, mode in enumerate(self.modes):
            cands = []
            for c, cm in enumerate(mode.per_cell):
                for d in CELL_LINKS[cm]:
                    if cm is CellMode.FDA:
                        cands.append(_cand(c, FDA_DL if d is ADL else FDA_UL))
                        self.mode_has_fda[i] = True
                    else:
                        cands.append(_cand(c, KINDS[d]))
                    if d is BUL:
                        self.mode_rx[i] |= 1 << c
                    elif d is BDL:
                        self.mode_tx[i] |= 1 << c
            self.mode_cand[i, : len(cands)] = cands
            self.mode_n[i] = len(cands)
            self.mode_ntx[i] = max(1, bin(self.mode_tx[i]).count("1"))
        self.rx_masks = sorted({int(m) for m in self.mode_rx if m})
        self.tx_masks = sorted({int(m) for m in self.mode_tx if m})
        self._rx_mask_arr = np.array(self.rx_masks, dtype=np.int64)
        nc = PER_CELL * ns
        self.cand_cell = np.repeat(np.arange(ns), PER_CELL).astype(np.int64)
        kind = np.tile(np.arange(PER_CELL), ns)
        p_m, p_s, p_u = (radio.max_power(k) for k in (NodeKind.MBS, NodeKind.SBS, NodeKind.UE))
        # Backhaul-DL is sent by the MBS, BUL/ADL by the SBS, AUL by a UE;
        # BUL is received by the MBS, BDL/AUL by the SBS, ADL by a UE.
        self._tx_mbs, self._tx_sbs = kind == 0, np.isin(kind, (1, 2, 4))
        self._rx_mbs, self._rx_sbs = kind == 1, np.isin(kind, (0, 3, 5))
        self.cand_pmax = np.select([self._tx_mbs, self._tx_sbs], [p_m, p_s], p_u).astype(float)
        self._kind = kind
        self._nc = nc
        self._scores = np.empty(M)
        gp_cap = radio.spectral_cap if options.capped_power_objective else np.inf
        self._solver = (INITS[options.solver.init], options.solver.min_power_fraction,
                        FORMS[options.solver.objective], gp_cap, options.solver.rel_tol,
                        options.solver.max_iterations, options.solver.newton_tol)
        self.unconverged = np.zeros(1, dtype=np.int64)

    # -- per-slot tables -------------------------------------------------
    def candidates(self, queues):
        """Flow, weight and endpoints of every candidate link."""
        ns, N = self.num_cells, self.ues_per_cell
        floor = self.options.floor_negative_weights
        flow = np.zeros(self._nc, dtype=np.int64)
        weight = np.zeros(self._nc)
        valid = np.ones(self._nc, dtype=bool)
        for d, k in KINDS.items():
            diff = differentials(queues, d)
            n = np.argmax(diff, axis=1)
            w = diff[np.arange(ns), n].astype(float)
            flow[k::PER_CELL] = n
            weight[k::PER_CELL] = np.maximum(w, 0.0) if floor else w
        for c in range(ns):
            pair = fda_flows(queues, c, floor)
            if pair is None:
                valid[_cand(c, FDA_DL)] = valid[_cand(c, FDA_UL)] = False
            else:
                a, b, wa, wb = pair
                flow[_cand(c, FDA_DL)], weight[_cand(c, FDA_DL)] = a, wa
                flow[_cand(c, FDA_UL)], weight[_cand(c, FDA_UL)] = b, wb
        cell = self.cand_cell
        ue_node = ns + cell * N + flow
        tx = np.where(self._tx_mbs, -1, np.where(self._tx_sbs, cell, ue_node))
        rx = np.where(self._rx_mbs, -1, np.where(self._rx_sbs, cell, ue_node))
        return flow, weight, valid, tx, rx

    def beam_gains(self, channel: ChannelState):
        """Effective MBS gains to every node for every receive/transmit beam set."""
        ns = self.num_cells
        K = channel.mbs.shape[0]
        size = 1 << ns
        rx_gain = np.zeros((size, ns, K))
        tx_gain = np.zeros((size, ns, K))
        load = self.radio.max_power(NodeKind.SBS) / channel.noise[NodeKind.MBS]
        printed = self.options.beam_loading == "printed"
        H = np.ascontiguousarray(channel.mbs)
        beam_table(H, self._rx_mask_arr, np.full(ns, load), printed, rx_gain)
        for mask in self.tx_masks:
            # Transmit loading divides by the number of simultaneous streams.
            streams = bin(mask).count("1")
            beam_table(H, np.array([mask], dtype=np.int64), np.full(ns, load / streams), printed,
                       tx_gain)
        return rx_gain, tx_gain

    def decide(self, queues, channel: ChannelState) -> ScheduleDecision:
        flow, weight, valid, tx, rx = self.candidates(queues)
        w_pos = np.maximum(weight, 0.0)
        radio = self.radio
        peak = radio.bandwidth_hz * radio.spectral_cap
        padded = np.append(w_pos, 0.0)
        bound = padded[self.mode_cand].sum(axis=1) * peak
        if not valid.all():
            bad = ~np.append(valid, True)[self.mode_cand].all(axis=1)
            bound[bad] = 0.0
        if not np.any(bound > 0):
            return ScheduleDecision(None)
        order = np.argsort(-bound, kind="stable").astype(np.int64)
        rx_gain, tx_gain = self.beam_gains(channel)
        noise_of = np.array([channel.noise[NodeKind.MBS], channel.noise[NodeKind.SBS],
                             channel.noise[NodeKind.UE]])
        cand_noise = np.where(rx == -1, noise_of[0], np.where(rx < self.num_cells, noise_of[1], noise_of[2]))
        Gs = np.abs(channel.scalar) ** 2
        scores = self._scores
        scores.fill(np.nan)
        top_k = self.options.reoptimize_top_k
        args = (self.mode_cand, self.mode_n, self.mode_rx, self.mode_tx, self.mode_ntx,
                tx, rx, self.cand_cell)
        best = evaluate_modes(order, bound, *args, w_pos, cand_noise, self.cand_pmax, Gs,
                              rx_gain, tx_gain, channel.gamma_mbs, channel.gamma_sbs,
                              radio.bandwidth_hz, radio.spectral_cap, self.options.power_control,
                              *self._solver, top_k == 1, scores, self.unconverged)
        if best < 0:
            return ScheduleDecision(None)
        if top_k == 1:
            finalists = [best]
        else:
            ranked = [m for m in np.argsort(-np.nan_to_num(scores, nan=-1.0), kind="stable")
                      if scores[m] > 0]
            finalists = ranked[:top_k]
        chosen = None
        for m in finalists:
            G, noise, pmax = assemble(m, *args, cand_noise, self.cand_pmax, Gs, rx_gain, tx_gain,
                                      channel.gamma_mbs, channel.gamma_sbs)
            k = self.mode_n[m]
            cands = self.mode_cand[m, :k]
            w = weight[cands]
            converged = True
            if self.options.power_control:
                history = np.empty(self._solver[5] + 1)
                p, _, converged = kernel.optimize(G, noise, np.maximum(w, 0.0), pmax, *self._solver,
                                                  history)
                if not converged:
                    self.unconverged[0] += 1
            else:
                p = pmax.copy()
            rates = np.empty(k)
            kernel.capped_rates(G, noise, p, radio.bandwidth_hz, radio.spectral_cap, rates)
            score = float(w @ rates)
            if chosen is None or (score, -m) > (chosen[0], -chosen[1]):
                chosen = (score, m, p, rates, w, converged, cands)
        score, m, p, rates, w, converged, cands = chosen
        mode = self.modes[m]
        flows = {}
        for c_idx in cands:
            c, kind = divmod(int(c_idx), PER_CELL)
            d = {0: BDL, 1: BUL, 2: ADL, 3: AUL, 4: ADL, 5: AUL}[kind]
            flows[(c, d)] = int(flow[c_idx])
        links = expand_links(mode, flows)
        return ScheduleDecision(mode, links, w, p, rates, score, bool(converged))

    def scores(self) -> np.ndarray:
        """Equal-weight scores of the last decision (NaN where pruned)."""
        return self._scores.copy()
