"""Trackers: the overlap tracker and the KF / EBMS baselines."""

from .classes import ClassVotes, assign_track_class, frame_class
from .ebms import EBMSConfig, EBMSTracker, run_ebms
from .kf import KalmanTracker, KFConfig, run_kf
from .ot import FREE, LOCKED, TRACKING, OTConfig, OverlapTracker, TrackerSlot, overlaps, run_ot

__all__ = [
    "ClassVotes", "assign_track_class", "frame_class",
    "EBMSConfig", "EBMSTracker", "run_ebms",
    "KalmanTracker", "KFConfig", "run_kf",
    "FREE", "LOCKED", "TRACKING", "OTConfig", "OverlapTracker", "TrackerSlot", "overlaps", "run_ot",
]
