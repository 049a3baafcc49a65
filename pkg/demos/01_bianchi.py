"""Saturated DCF relations: collision probability vs. number of stations.

Prints tau(p), the station count n = f(p) and the inverse h(n) = p for a
few loads, then shows how the slope dp/dn flattens as the channel fills
up, which is why counting stations gets harder at large n.

    python demos/01_bianchi.py
"""
from wifiload.bianchi import ProtocolParams, collision_of_users, collision_slope, tau_of_p, users_of_p

params = ProtocolParams()
print(f"window G={params.G}, backoff stages m={params.m}")
print()
print("   n      p=h(n)    tau(p)    f(h(n))    dp/dn")
for n in (2, 5, 10, 15, 20, 25, 30, 40, 50):
    p = collision_of_users(n, params)
    print(f"{n:4d}   {p:.6f}  {tau_of_p(p, params):.6f}  {users_of_p(p, params):9.6f}  {collision_slope(n, params):.5f}")

print()
print("One percentage point of error in p is worth this many stations:")
for n in (5, 15, 30):
    print(f"  n={n:2d}: {0.01 / collision_slope(n, params):.2f}")
