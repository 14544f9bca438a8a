import logging
from typing import Optional

import numpy as np

from models.errors import InvalidStateError
from models.geometry import Polytope, set_distance_upper, subset_check
from models.network import IntervalNetwork, LipschitzBound, Network, inn_contains
from models.verification import Branch, OutputSpec, RelaxedCertificate, Status, Verdict
from services.reachability_service import reach_region

logger = logging.getLogger(__name__)


def rsr_build(branch: Branch, net: Network, spec: OutputSpec, offset: float,
              built_at: int = 0) -> Optional[RelaxedCertificate]:
    """Certify the branch region with every constraint constant relaxed by ``offset``.

    Returns None when the relaxed region no longer verifies.
    """
    if offset < 0:
        raise InvalidStateError(f"relaxation offset must be non-negative, got {offset}")
    if not branch.verdict.holds:
        raise InvalidStateError(f"branch {branch.id} does not hold; nothing to relax")
    relaxed = branch.region.relaxed(offset)
    reach = reach_region(net, relaxed)
    margins = spec.margins(reach.output)
    if np.any(margins < 0):
        logger.debug(f"Relaxation by {offset} loses branch {branch.id} (worst margin {margins.min():.3e})")
        return None
    return RelaxedCertificate(
        relaxed_region=relaxed,
        relaxed_reach=reach,
        built_at=built_at,
        verdict=Verdict(Status.HOLD, margins),
        network=net,
        offset=offset,
    )


def rsr_tolerable(branch_region_t: Polytope, cert: RelaxedCertificate) -> bool:
    return bool(subset_check(branch_region_t, cert.relaxed_region))


def lb_tolerable(branch: Branch, region_t: Polytope, L: Optional[LipschitzBound] = None) -> bool:
    """True when the region drifted less than the branch's Lipschitz threshold since its epoch.

    The threshold already folds in the Lipschitz bound of the epoch network;
    ``L`` only short-cuts the constant-network case.
    """
    if branch.lb_delta is None or branch.epoch_region is None:
        raise InvalidStateError(f"branch {branch.id} carries no Lipschitz threshold")
    if L is not None and L.value == 0:
        return True
    if region_t.equals(branch.epoch_region):
        return True
    distance = set_distance_upper(branch.epoch_region, region_t, stop_above=branch.lb_delta)
    return distance <= branch.lb_delta


def inn_tolerable(inn: IntervalNetwork, net_t: Network) -> bool:
    return inn_contains(inn, net_t)
