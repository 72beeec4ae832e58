"""
Mobility profiles and risk ranking
==================================

From raw location events to a ranked list of users. Three users, three
regions, one day of events.
"""

import io

import numpy as np

from mobrisk import RegionState, build_presence, build_profiles, modal_region, parse_traces, rank_users

###############################################################################
# A trace file has one row per observed event. Between events a user is
# assumed to stay where they were last seen.

text = """user_id,timestamp,region_id
alice,2013-07-01T00:00:00Z,north
alice,2013-07-01T18:00:00Z,south
bob,2013-07-01T09:00:00Z,south
carol,2013-07-01T00:00:00Z,north
carol,2013-07-01T08:00:00Z,east
carol,2013-07-01T16:00:00Z,south
"""
trace = parse_traces(io.StringIO(text))
print(trace.users, trace.regions, trace.report)

day = (trace.start, trace.end)
timeline = build_presence(trace, "alice", day)
print(timeline.segments)
print("alice's modal region:", modal_region(timeline, trace.start // 86400))

###############################################################################
# Profiles are time fractions over the window.

profiles = build_profiles(trace, day)
for u in profiles.user_ids:
    print(u, dict(zip(profiles.registry, np.round(profiles[u].allocation, 3).tolist())))

###############################################################################
# Suppose the north has 20% infected and the south is fully susceptible.
# A user scores high when they spend time both where infection is and where
# susceptible people are.

state = RegionState(infected=[0.0, 0.2, 0.0], susceptible=[1.0, 0.8, 1.0], registry=trace.regions)
ranking = rank_users(profiles, state)
for user, score in ranking:
    print(f"{user:>6} {score:.4f}")

###############################################################################
# Only the region-to-region coupling, without the within-region terms:

for user, score in rank_users(profiles, state, diagonal=False):
    print(f"{user:>6} {score:.4f}")
