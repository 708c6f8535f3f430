# Regenerates hankel_oracle.csv: J0/Y0/J1/Y1 at 1000 log-spaced points in (1e-3, 500],
# evaluated with mpmath at 40 significant digits.
import mpmath as mp

mp.mp.dps = 40
n = 1000
lo, hi = mp.mpf("1e-3"), mp.mpf(500)
with open("hankel_oracle.csv", "w") as f:
    f.write("z,j0,y0,j1,y1\n")
    for k in range(n):
        z = lo * (hi / lo) ** (mp.mpf(k + 1) / n)
        z = mp.mpf(float(z))
        vals = [mp.besselj(0, z), mp.bessely(0, z), mp.besselj(1, z), mp.bessely(1, z)]
        f.write(",".join([repr(float(z))] + [mp.nstr(v, 20) for v in vals]) + "\n")
