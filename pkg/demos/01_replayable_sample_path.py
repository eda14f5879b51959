"""
A world you can replay
======================

Every random quantity in the simulator is read from four unit-mean
exponential streams: H inter-arrivals, L inter-arrivals, H services and L
services.  A variate is a pure function of ``(seed, stream, index)``, so a
lookahead rule can peek arbitrarily far ahead without disturbing the live run.
"""

from lossnet import AcceptAll, reference_params, run
from lossnet.samplepath import Cursor, SamplePath, StreamId, draw_next

path = SamplePath(seed=42)

# Reading index 10**6 first and index 0 later gives the same numbers as
# reading them in order.
far = path.value_at(StreamId.AH, 10**6)
print("AH[10**6] =", far, "==", SamplePath(42).value_at(StreamId.AH, 10**6))

# The live simulation consumes variates through a cursor.
cur = Cursor()
print("first two H inter-arrival variates:", draw_next(cur, path, StreamId.AH), draw_next(cur, path, StreamId.AH))
print("cursor now at", cur.index)

# A quick look at the distribution.
x = path.values(StreamId.SH, 0, 100_000)
print(f"mean {x.mean():.4f}  variance {x.var():.4f}  min {x.min():.2e}")

# Same seed, same trajectory, bit for bit.
params = reference_params(10)
a = run(params, AcceptAll(), 20.0, seed=7, record_events=True)
b = run(params, AcceptAll(), 20.0, seed=7, record_events=True)
print("identical event lists:", a.events == b.events, f"({len(a.events)} events)")
