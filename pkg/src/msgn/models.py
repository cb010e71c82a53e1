"""Small reference networks used by the tests, scripts and CLI examples."""
import re

from .network import parse_network

TELEGRAPH = """\
species continuous: P
species discrete: G
param k1 = 2.0
param k2 = 1.0
param a = 0.5
param b = 1.0
domain G = 0..1
reaction prod class=C h=[+1] e=[0] rate = k1*G
reaction deg class=C h=[-1] e=[0] rate = k2*P
reaction on class=D h=[0] e=[+1] rate = a*(1-G)
reaction off class=D h=[0] e=[-1] rate = b*G
"""

# switch-on rate grows with the protein level, so Y^N and Y can part ways
TELEGRAPH_FEEDBACK = TELEGRAPH.replace("rate = a*(1-G)", "rate = a*(1+P/10)*(1-G)")

PURE_BIRTH = """\
species continuous: X
reaction birth class=C h=[+1] rate = 1
"""


def telegraph(k1=2.0, k2=1.0, a=0.5, b=1.0, feedback=False):
    src = TELEGRAPH_FEEDBACK if feedback else TELEGRAPH
    for name, v in (("k1", k1), ("k2", k2), ("a", a), ("b", b)):
        src = re.sub(rf"^param {name} = \S+$", f"param {name} = {float(v)!r}", src, flags=re.M)
    return parse_network(src)


def pure_birth():
    return parse_network(PURE_BIRTH)
