"""CSV traces of platoon runs: one row per step and vehicle.

Vehicle 0 is the HDV; its control columns are empty. The row for step k
holds the state at k and the control applied from k to k + 1, so the last
step of a trace carries no control.
"""

import logging
import os

import numpy as np
import pandas as pd

from .core import PlatoonState, control_uncertainty, desired_spacing
from .errors import TraceFormatError
from .feasibility import g_slack

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "step",
    "vehicle_id",
    "x",
    "v",
    "u",
    "delta_u",
    "g_slack",
    "dx_err",
    "dv_err",
    "solver_status",
    "objective",
    "fallback_flag",
]
NAN = float("nan")


def trace_rows(state, vps, gp, controls, deltas, status, objective, fallback):
    """Rows of one step; ``controls``/``deltas`` are None on the last step."""
    rows = [
        {
            "step": state.step,
            "vehicle_id": 0,
            "x": state.leader.x,
            "v": state.leader.v,
            "u": NAN,
            "delta_u": NAN,
            "g_slack": NAN,
            "dx_err": NAN,
            "dv_err": NAN,
            "solver_status": status,
            "objective": objective,
            "fallback_flag": fallback,
        }
    ]
    for i, (cav, vp) in enumerate(zip(state.cavs, vps), start=1):
        lead = state.predecessor(i)
        rows.append(
            {
                "step": state.step,
                "vehicle_id": i,
                "x": cav.x,
                "v": cav.v,
                "u": NAN if controls is None else controls[i - 1],
                "delta_u": NAN if deltas is None else deltas[i - 1],
                "g_slack": g_slack(lead, cav, vp, gp),
                "dx_err": lead.x - cav.x - desired_spacing(cav.v, lead.v, vp, gp),
                "dv_err": lead.v - cav.v,
                "solver_status": status,
                "objective": objective,
                "fallback_flag": fallback,
            }
        )
    return rows


def trace_frame(rows):
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    frame["step"] = frame["step"].astype(int)
    frame["vehicle_id"] = frame["vehicle_id"].astype(int)
    frame["fallback_flag"] = frame["fallback_flag"].astype(bool)
    return frame


def sequence_frame(sequence):
    """Trace of a single-CAV control sequence behind its constant-speed HDV."""
    sc = sequence.scenario
    rows = []
    last = len(sequence.controls)
    for k, (lead, cav) in enumerate(zip(sequence.lead_states, sequence.states)):
        state = PlatoonState(leader=lead, cavs=(cav,), step=k)
        if k < last:
            u = sequence.controls[k]
            delta = control_uncertainty(cav, u, sc.vp)
            rows.extend(trace_rows(state, [sc.vp], sc.gp, [u], [delta], sequence.strategy, NAN, False))
        else:
            rows.extend(trace_rows(state, [sc.vp], sc.gp, None, None, "none", NAN, False))
    return trace_frame(rows)


def write_trace(frame, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.debug("wrote %d trace rows to %s", len(frame), path)
    return path


def read_trace(path):
    """Load a trace CSV and check it against the column schema.

    Raises:
        TraceFormatError: A column is missing, or the file is empty or
            unreadable as CSV.
    """
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise TraceFormatError(f"{path}: trace file is empty") from exc
    except pd.errors.ParserError as exc:
        raise TraceFormatError(f"{path}: not a CSV trace ({exc})") from exc
    for column in TRACE_COLUMNS:
        if column not in frame.columns:
            raise TraceFormatError(f"{path}: missing column '{column}'", column=column)
    if frame.empty:
        raise TraceFormatError(f"{path}: trace has no rows")
    frame = frame[TRACE_COLUMNS].copy()
    frame["fallback_flag"] = frame["fallback_flag"].astype(str).str.lower().isin(("true", "1"))
    frame["solver_status"] = frame["solver_status"].astype(str)
    return frame


def vehicle_series(frame, column):
    """Pivot one column to a step x vehicle table."""
    return frame.pivot(index="step", columns="vehicle_id", values=column).sort_index()


def replay_trace(frame, tau):
    """Largest deviation between logged states and states stepped from logged controls.

    Uses x' = x + tau v + tau^2 / 2 (u - delta_u) and v' = v + tau (u - delta_u)
    for every CAV row that has a successor step.
    """
    positions = vehicle_series(frame, "x")
    speeds = vehicle_series(frame, "v")
    effective = vehicle_series(frame, "u") - vehicle_series(frame, "delta_u")
    cav_ids = [vid for vid in positions.columns if vid != 0]
    if len(positions) < 2 or not cav_ids:
        return 0.0
    x, v, a = (table[cav_ids].to_numpy() for table in (positions, speeds, effective))
    x_next = x[:-1] + tau * v[:-1] + 0.5 * tau**2 * a[:-1]
    v_next = v[:-1] + tau * a[:-1]
    error = np.maximum(np.abs(x_next - x[1:]), np.abs(v_next - v[1:]))
    if np.isnan(error).any():
        raise TraceFormatError("trace has a missing control before its last step", column="u")
    return float(error.max())
