"""Independent reference computations shared by the test modules."""

import math
from fractions import Fraction


def datasheet_airtime_ns(sf, bw, cr, payload, preamble=8, header=True, crc=True, ldro=False):
    """SX1276 datasheet relation evaluated with exact rationals, rounded half up to 1 ns."""
    t_sym = Fraction(2**sf, bw)
    t_preamble = (preamble + Fraction(17, 4)) * t_sym
    de = 1 if ldro else 0
    ih = 0 if header else 1
    numerator = 8 * payload - 4 * sf + 28 + 16 * (1 if crc else 0) - 20 * ih
    n_payload = 8 + max(math.ceil(Fraction(numerator, 4 * (sf - 2 * de))) * (cr + 4), 0)
    seconds = t_preamble + n_payload * t_sym
    return math.floor(seconds * 10**9 + Fraction(1, 2))


def brute_c_max(m):
    """Largest child count whose worst-case UP_DATA content fits 255 bytes, by enumeration."""
    fixed = 3 + 8 + 2 + 64 + 64 + 10 + 8 * m
    k = 0
    while fixed + (k + 1) * (8 + 10 + 8 * m) <= 255 * 8:
        k += 1
    return k


# reference time periods in seconds for M = 30 B, indexed [C][p]
PERIOD_TABLE_M30 = {
    1: {1: 44.032, 2: 81.9968, 3: 119.9104},
    2: {1: 25.1264, 2: 44.0832, 3: 63.0400},
    3: {1: 18.8075, 2: 31.4453, 3: 44.0832},
    4: {1: 15.6480, 2: 25.1264, 3: 34.6048},
}


def invert_period_pair(t_lo, t_hi, p_lo, duty_cycle=Fraction(1, 100)):
    """Airtimes (UP_DATA, ACK) in ns implied by the C=1 cells for p_lo and p_lo + 1."""
    lo = Fraction(str(t_lo)) * duty_cycle
    hi = Fraction(str(t_hi)) * duty_cycle
    up = hi - lo
    ack = lo - p_lo * up
    return round(up * 10**9), round(ack * 10**9)
