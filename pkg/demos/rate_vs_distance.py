"""Key rate against distance for mode pairing and its comparison schemes.

Run:  python3 demos/rate_vs_distance.py
"""
import math

from mpqkd.channel import ChannelParams
from mpqkd.keyrate import optimized_rate, plob_bound

channel = ChannelParams()

# %% Rates with the intensity optimised per point. Mode pairing with a short
# pairing interval behaves like time-bin MDI; a long interval gains a square root.
print(f"{'km':>5} {'MDI':>10} {'MP l=1':>10} {'MP l=1e3':>10} {'MP l=inf':>10} {'PLOB':>10}")
for d in range(0, 501, 50):
    ch = channel.at_distance(d)
    row = [optimized_rate("mdi", 1, ch).rate] + [optimized_rate("mp", l, ch).rate for l in (1, 1000, math.inf)]
    row.append(plob_bound(ch.eta))
    print(f"{d:5d} " + " ".join(f"{r:10.3e}" for r in row))

# %% How the rate grows with the pairing interval at 400 km, then saturates
# once l passes the inverse click probability.
ch = channel.at_distance(400)
print("\nl        rate        mu*    l * p")
for l in (1, 10, 100, 10**3, 10**4, 10**5, 10**6, 10**7):
    r = optimized_rate("mp", l, ch)
    print(f"{l:<8d} {r.rate:10.3e} {r.mu:6.3f} {l * r.p:9.3g}")
