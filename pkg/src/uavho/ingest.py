"""Flight measurement logs: parsing, buffer replay and a synthetic generator.

Logs carry positions and per-candidate RSRP/RSRQ but no buffer state; the
buffer is re-synthesised by running the traffic model along the log, with
the serving cell's RSRQ standing in for the uplink SINR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from . import traffic as tr
from .env import (BUF, N_FEATURES, POS, RSRP0, RSRQ0, SERVING, ALT, ChmPolicy, Grid,
                  HandoverEnv, Scenario, StateVector, TrajectorySpec)
from .errors import OutOfBounds, ParseError

HEADER = ("t,uav_id,x,y,alt,serving_cell,"
          "c0_id,c0_rsrp,c0_rsrq,c1_id,c1_rsrp,c1_rsrq,"
          "c2_id,c2_rsrp,c2_rsrq,c3_id,c3_rsrp,c3_rsrq").split(",")
PAD_ID = -1
PAD_RSRP = -140.0
PAD_RSRQ = -30.0


@dataclass(frozen=True)
class Candidate:
    cell_id: int
    rsrp: float
    rsrq: float

    @property
    def is_padding(self) -> bool:
        return self.cell_id == PAD_ID


PADDING = Candidate(PAD_ID, PAD_RSRP, PAD_RSRQ)


@dataclass(frozen=True)
class FlightLogRow:
    t: float
    uav_id: str
    x: float
    y: float
    alt: float
    serving_cell: int
    candidates: tuple  # exactly four Candidate entries, padded


def _num(text: str, what: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{what}: not a number: {text!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"{what}: non-finite value", line)
    return v


def _int(text: str, what: str, line: int) -> int:
    v = _num(text, what, line)
    if v != int(v):
        raise ParseError(f"{what}: not an integer: {text!r}", line)
    return int(v)


def parse_flight_log(stream: Iterable[str]) -> list[FlightLogRow]:
    """Strictly parse a flight log; short candidate lists are padded."""
    reader = csv.reader(stream)
    header = None
    rows = []
    last_t: dict = {}
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].startswith("#"):
            continue
        if header is None:
            header = [c.strip() for c in row]
            if header != HEADER:
                raise ParseError(f"bad header; expected {','.join(HEADER)}", line)
            continue
        if len(row) != len(HEADER):
            raise ParseError(f"expected {len(HEADER)} fields, got {len(row)}", line)
        t = _num(row[0], "t", line)
        uav = row[1].strip()
        if not uav:
            raise ParseError("empty uav_id", line)
        x, y, alt = (_num(row[i], HEADER[i], line) for i in (2, 3, 4))
        if alt <= 0:
            raise ParseError("alt must be > 0", line)
        serving = _int(row[5], "serving_cell", line)
        cands = []
        for k in range(4):
            cid, rp, rq = (row[6 + 3 * k + j].strip() for j in range(3))
            if cid == "" and rp == "" and rq == "":
                cands.append(PADDING)
                continue
            if "" in (cid, rp, rq):
                raise ParseError(f"candidate {k} partially filled", line)
            cands.append(Candidate(_int(cid, f"c{k}_id", line), _num(rp, f"c{k}_rsrp", line),
                                   _num(rq, f"c{k}_rsrq", line)))
        if all(c.is_padding for c in cands):
            raise ParseError("row has no measured candidate", line)
        if uav in last_t and t < last_t[uav]:
            raise ParseError(f"timestamp {t} goes backwards for uav {uav}", line)
        last_t[uav] = t
        rows.append(FlightLogRow(t, uav, x, y, alt, serving, tuple(cands)))
    if header is None:
        raise ParseError("missing header row", 1)
    return rows


@dataclass
class ReplayedTrace:
    states: list = field(default_factory=list)  # StateVector per kept row
    handovers: list = field(default_factory=list)
    buffers: list = field(default_factory=list)  # bits, equals state buffer slot
    uav_ids: list = field(default_factory=list)
    row_index: list = field(default_factory=list)
    skipped_rows: int = 0
    warnings: list = field(default_factory=list)


def _slots(row: FlightLogRow) -> tuple[list, bool]:
    """Four candidates sorted by RSRP (ties: lower id) with the serving cell pinned."""
    cands = list(row.candidates)
    pinned = False
    if row.serving_cell not in [c.cell_id for c in cands]:
        pinned = True
        cands.sort(key=lambda c: (-c.rsrp, c.cell_id))
        cands[-1] = Candidate(row.serving_cell, PAD_RSRP, PAD_RSRQ)
    cands.sort(key=lambda c: (-c.rsrp, c.cell_id))
    return cands, pinned


def replay_to_states(rows: Sequence[FlightLogRow], traffic_params: tr.TrafficParams,
                     grid: Grid, seed: int) -> ReplayedTrace:
    out = ReplayedTrace()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    per_uav: dict = {}  # uav -> (buffer, previous serving cell)
    for k, row in enumerate(rows):
        try:
            cell = grid.cell_index(row.x, row.y)
        except OutOfBounds:
            out.skipped_rows += 1
            out.warnings.append(f"row {k}: position ({row.x}, {row.y}) outside grid, skipped")
            continue
        cands, pinned = _slots(row)
        if pinned:
            out.warnings.append(f"row {k}: serving cell {row.serving_cell} not measured")
        buf, prev = per_uav.get(row.uav_id, (tr.BufferState(), None))
        handover = prev is not None and row.serving_cell != prev
        if prev is not None:
            serving_rsrq = next(c.rsrq for c in cands if c.cell_id == row.serving_cell)
            sinr = 10.0 ** (serving_rsrq / 10.0)
            served = tr.service_bits(sinr, traffic_params)
            buf = tr.step_queue(buf, tr.draw_arrivals(traffic_params, rng), handover,
                                served, traffic_params)
        per_uav[row.uav_id] = (buf, row.serving_cell)
        v = np.empty(N_FEATURES)
        v[POS] = cell
        v[ALT] = row.alt
        v[BUF] = buf.bits_queued
        v[SERVING] = [c.cell_id for c in cands].index(row.serving_cell)
        v[RSRP0:RSRP0 + 4] = [c.rsrp for c in cands]
        v[RSRQ0:RSRQ0 + 4] = [c.rsrq for c in cands]
        out.states.append(StateVector(v, tuple(c.cell_id for c in cands)))
        out.handovers.append(bool(handover))
        out.buffers.append(buf.bits_queued)
        out.uav_ids.append(row.uav_id)
        out.row_index.append(k)
    return out


def lawnmower(grid: Grid, lanes: int = 5, margin: float = 100.0) -> tuple:
    xs = (grid.x_min + margin, grid.x_max - margin)
    ys = np.linspace(grid.y_min + margin, grid.y_max - margin, lanes)
    pts = []
    for i, y in enumerate(ys):
        a, b = xs if i % 2 == 0 else xs[::-1]
        pts += [(a, float(y)), (b, float(y))]
    return tuple(pts)


def generate_sample_log(scenario: Scenario, seed: int, n_rows: int = 200,
                        uav_id: str = "1", speed: float = 40.0,
                        noise_db: float = 1.0, drop_prob: float = 0.05) -> list[FlightLogRow]:
    """Synthetic log in the flight-log schema: a lawnmower flight under the
    CHM baseline with Gaussian measurement noise, and occasionally fewer
    than four reported neighbours."""
    sc = replace(scenario, episode_steps=n_rows,
                 trajectory=TrajectorySpec("waypoints", lawnmower(scenario.grid), speed))
    env = HandoverEnv(sc)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    policy = ChmPolicy(sc.chm.hysteresis_db, sc.chm.time_to_trigger_steps)
    state = env.reset(seed)
    rows = []
    for t in range(n_rows):
        x, y, alt = env.trajectory.position()
        cands = []
        for slot, cid in enumerate(state.candidate_bs_ids):
            if cid != state.serving_bs_id and rng.random() < drop_prob:
                continue
            cands.append(Candidate(int(cid),
                                   round(float(state.rsrp[slot] + noise_db * rng.standard_normal()), 2),
                                   round(float(state.rsrq[slot] + noise_db * rng.standard_normal()), 2)))
        cands += [PADDING] * (4 - len(cands))
        rows.append(FlightLogRow(float(t), uav_id, round(x, 2), round(y, 2), round(alt, 2),
                                 int(state.serving_bs_id), tuple(cands)))
        state = env.step(policy(state)).next_state
    return rows


def _fmt(v: float) -> str:
    return repr(float(v))


def write_flight_log(rows: Sequence[FlightLogRow], fh: TextIO) -> None:
    fh.write(",".join(HEADER) + "\n")
    for r in rows:
        fields = [_fmt(r.t), r.uav_id, _fmt(r.x), _fmt(r.y), _fmt(r.alt), str(r.serving_cell)]
        for c in r.candidates:
            fields += ["", "", ""] if c.is_padding else [str(c.cell_id), _fmt(c.rsrp), _fmt(c.rsrq)]
        fh.write(",".join(fields) + "\n")
