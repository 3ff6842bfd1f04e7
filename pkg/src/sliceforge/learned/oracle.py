"""Ground-truth slice labels from the admission rules."""

from __future__ import annotations

import logging

from ..domain import SliceKind
from ..slicing import NEED_TO_SLICE, ServiceNeed, classify_need

log = logging.getLogger(__name__)


def oracle_label(record) -> SliceKind:
    need = classify_need(record)
    if need is ServiceNeed.UNMATCHED:
        # labeling only; the admission path sends these to Master instead
        log.debug("request %s matches no service need; labelled eMBB", record.id)
        return SliceKind.EMBB
    return NEED_TO_SLICE[need]
