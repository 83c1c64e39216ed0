"""Synchronized replay start across several instances."""

from __future__ import annotations

import threading

from .errors import AlreadyMember, NotReady


class SyncRegistry:
    """Group membership plus an all-or-nothing start trigger.

    ``trigger_start`` runs under one registry-wide lock, so two members
    receiving their first packet at the same moment cannot start the
    group twice or with different start times.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._groups: dict[int, list] = {}
        self._group_of: dict[int, int] = {}

    def join(self, group_id: int, instance) -> None:
        with self._lock:
            current = self._group_of.get(id(instance))
            if current == group_id:
                return
            if current is not None:
                raise AlreadyMember(
                    f"{instance.name} already belongs to syncgroup {current}"
                )
            self._groups.setdefault(group_id, []).append(instance)
            self._group_of[id(instance)] = group_id

    def leave(self, instance) -> None:
        with self._lock:
            group_id = self._group_of.pop(id(instance), None)
            if group_id is not None:
                self._groups[group_id].remove(instance)

    def members(self, group_id: int) -> list:
        with self._lock:
            return list(self._groups.get(group_id, ()))

    def group_of(self, instance) -> int | None:
        return self._group_of.get(id(instance))

    def trigger_start(self, group_id: int, now_us: int) -> list:
        """Start every member at ``now_us``; returns the members that started.

        Members already running are left alone.  If any other member is not
        in LOAD/ARM with a non-empty timeline, :class:`NotReady` is raised
        and no member changes stage.
        """
        with self._lock:
            members = self._groups.get(group_id, [])
            for member in members:
                if not member.ready_to_start():
                    raise NotReady(
                        f"syncgroup {group_id}: member {member.name} is not ready "
                        f"(stage {member.stage.name}, {len(member.timeline)} entries)",
                        member=member,
                    )
            started = [m for m in members if not m.running]
            for member in started:
                member._start_replay(now_us)
            return started


default_registry = SyncRegistry()
