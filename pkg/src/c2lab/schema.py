"""Fixed 86-slot flow feature schema indexed by Tstat column IDs.

Slot order follows the Tstat ``log_tcp_complete`` column numbering so that
attack-mask arithmetic can be written directly against the familiar column
IDs.  Only the Core and TCP end-to-end groups are computed from packets;
the TCP-options and layer-7 groups are schema placeholders pinned to zero,
which keeps the detector input width and mask index math stable.
"""

from __future__ import annotations

import numpy as np

TSTAT_IDS: tuple[int, ...] = tuple(
    list(range(3, 15))      # per-direction packet counters, C2S
    + list(range(17, 29))   # per-direction packet counters, S2C
    + list(range(31, 38))   # duration and relative payload/ACK times
    + list(range(45, 59))   # RTT statistics and TTL extremes
    + list(range(65, 80)) + [83, 85]            # TCP options, C2S block
    + list(range(90, 105)) + list(range(106, 110))  # TCP options, S2C block
    + [114, 115] + list(range(120, 123))        # layer-7 / TLS timing
)

N_SLOTS = len(TSTAT_IDS)

SLOT_OF: dict[int, int] = {fid: i for i, fid in enumerate(TSTAT_IDS)}

CORE_IDS = frozenset(range(3, 15)) | frozenset(range(17, 29)) | frozenset(range(31, 38))
E2E_IDS = frozenset(range(45, 59))
IMPLEMENTED_IDS = CORE_IDS | E2E_IDS
UNIMPLEMENTED_IDS = frozenset(TSTAT_IDS) - IMPLEMENTED_IDS

# Direction-mirrored column pairs (client-to-server id, server-to-client id).
DIRECTION_PAIRS: tuple[tuple[int, int], ...] = tuple(
    [(c, c + 14) for c in range(3, 15)]         # 3-14 <-> 17-28
    + [(32, 33), (34, 35), (36, 37)]
    + [(c, c + 7) for c in range(45, 52)]       # 45-51 <-> 52-58
    + [(67, 90), (68, 91), (69, 92), (70, 93), (71, 94), (72, 95),
       (73, 96), (74, 97), (75, 98), (76, 99), (77, 100), (78, 101),
       (79, 102), (85, 108), (114, 115), (121, 122)]
)


def _sides() -> dict[int, str]:
    side: dict[int, str] = {fid: "both" for fid in TSTAT_IDS}
    for c2s, s2c in DIRECTION_PAIRS:
        side[c2s] = "c2s"
        side[s2c] = "s2c"
    # Unpaired columns: 65/66/83/120 belong to the client option block,
    # 103/104/106/107/109 to the server block; 31 (duration) has no side.
    for fid in (65, 66, 83, 120):
        side[fid] = "c2s"
    for fid in (103, 104, 106, 107, 109):
        side[fid] = "s2c"
    side[31] = "both"
    return side


SIDE_OF: dict[int, str] = _sides()

_UNIT_GROUPS = {
    "count": set(range(3, 7)) | set(range(17, 21)) | {8, 10, 12, 13, 14, 22, 24, 26, 27, 28, 49, 56}
    | {65, 66, 67, 68, 69, 75, 79, 83, 85, 90, 91, 92, 98, 102, 103, 104, 106, 107, 108, 109, 114, 115, 120},
    "bytes": {7, 9, 11, 21, 23, 25, 70, 71, 72, 73, 74, 76, 77, 78, 93, 94, 95, 96, 97, 99, 100, 101},
    "ms": set(range(31, 38)) | set(range(45, 49)) | set(range(52, 56)) | {121, 122},
    "hops": {50, 51, 57, 58},
}

UNIT_OF: dict[int, str] = {
    fid: unit for unit, ids in _UNIT_GROUPS.items() for fid in ids if fid in SLOT_OF
}

FEATURE_COLUMNS: tuple[str, ...] = tuple(f"f{fid}" for fid in TSTAT_IDS)


def implemented_mask() -> np.ndarray:
    """Boolean (86,) array, True on computed slots."""
    return np.array([fid in IMPLEMENTED_IDS for fid in TSTAT_IDS], dtype=bool)


def ids_to_mask(ids) -> np.ndarray:
    """Boolean (86,) array selecting the given Tstat column IDs."""
    mask = np.zeros(N_SLOTS, dtype=bool)
    for fid in ids:
        mask[SLOT_OF[fid]] = True
    return mask


def swap_directions(values: np.ndarray) -> np.ndarray:
    """Exchange every C2S slot with its S2C mirror; direction-neutral slots stay."""
    out = values.copy()
    for c2s, s2c in DIRECTION_PAIRS:
        out[SLOT_OF[c2s]], out[SLOT_OF[s2c]] = values[SLOT_OF[s2c]], values[SLOT_OF[c2s]]
    return out
