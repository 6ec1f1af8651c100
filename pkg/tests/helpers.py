"""Drivers shared by the test modules."""
from loopsched import dls
from loopsched.dls import DlsConfig

from reference_dls import feed

FSC_H = 1e-4
FSC_SIGMA = 1e-3


def wf_weights(P):
    raw = [1.0 + i % 3 for i in range(P)]
    s = sum(raw)
    return tuple(x * P / s for x in raw)


def config(N, P):
    return DlsConfig(N, P, h=FSC_H, sigma=FSC_SIGMA, static_weights=wf_weights(P))


def production_replay(tech, N, P):
    """Round-robin driver over loopsched.dls with the reference timing feed."""
    st = dls.init_state(tech, config(N, P))
    out, last, done, k = [], {}, set(), 0
    while len(done) < P:
        for pe in range(P):
            if pe in done:
                continue
            if pe in last:
                size = last.pop(pe)
                it, tot = feed(pe, size, k)
                k += 1
                dls.update_stats(st, pe, size, it, tot)
            c = dls.next_chunk(st, pe)
            if c is None:
                done.add(pe)
                continue
            out.append((pe, c[0], c[1]))
            last[pe] = c[1]
    return out
