"""Deterministic counter-based random streams.

Every stochastic draw in the simulator comes from a Philox stream keyed by
(global seed, namespace, owner id), so serial and parallel execution produce
identical results and runs are reproducible bit-for-bit from the seed alone.
"""

import numpy as np

_PARTICLE_NS = 1
_AGENT_EVENT_NS = 2
_EMISSION_NS = 3


def _stream(seed, *spawn_key):
    ss = np.random.SeedSequence(seed, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def particle_stream(seed, particle_id):
    """Stream owning all draws made on behalf of one particle."""
    return _stream(seed, _PARTICLE_NS, particle_id)


def agent_event_stream(seed, agent_id):
    """Stream driving one agent's respiratory-event processes."""
    return _stream(seed, _AGENT_EVENT_NS, agent_id)


def emission_stream(seed, agent_id, event_index):
    """Stream for sampling one emission batch (sizes, speeds, mask, tags)."""
    return _stream(seed, _EMISSION_NS, agent_id, event_index)
