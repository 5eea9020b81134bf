"""Minimal deterministic SVG plotting for report outputs.

No timestamps, no randomness: identical inputs give identical bytes, which
the rerun-reproducibility checks rely on.
"""

import math

import numpy as np

PALETTE = ("#3366aa", "#cc4444", "#44aa77", "#8855bb", "#bb8833", "#447788")


def _f(v):
    """Pixel coordinate with fixed precision."""
    return "%.2f" % float(v)


def nice_ticks(lo, hi, n=5):
    """Round tick positions covering [lo, hi] on a 1-2-5 grid."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0]
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(n, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if raw <= step:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks or [lo]


def fmt_tick(v):
    if v == 0:
        return "0"
    a = abs(v)
    if a >= 1e5 or a < 1e-3:
        return "%.1e" % v
    s = "%.4g" % v
    return s


class Figure:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = []

    def add(self, s):
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="start", color="#222222",
             rotate=None):
        tr = (' transform="rotate(%s %s %s)"' % (_f(rotate), _f(x), _f(y))
              if rotate is not None else "")
        self.add('<text x="%s" y="%s" font-size="%d" text-anchor="%s" '
                 'fill="%s" font-family="sans-serif"%s>%s</text>'
                 % (_f(x), _f(y), size, anchor, color, tr, _escape(s)))

    def to_string(self):
        head = ('<svg xmlns="http://www.w3.org/2000/svg" width="%d" '
                'height="%d" viewBox="0 0 %d %d">'
                % (self.width, self.height, self.width, self.height))
        bg = ('<rect x="0" y="0" width="%d" height="%d" fill="#ffffff"/>'
              % (self.width, self.height))
        return head + bg + "".join(self.parts) + "</svg>"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_string())


def _escape(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


class Panel:
    """Axis-mapped drawing region inside a Figure."""

    def __init__(self, fig, x, y, w, h, xlim, ylim, title="", xlabel="",
                 ylabel=""):
        self.fig = fig
        self.x, self.y, self.w, self.h = x, y, w, h
        lo, hi = float(xlim[0]), float(xlim[1])
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            lo, hi = lo - 0.5, lo + 0.5
        self.xlim = (lo, hi)
        lo, hi = float(ylim[0]), float(ylim[1])
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            lo, hi = lo - 0.5, lo + 0.5
        self.ylim = (lo, hi)
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel

    def px(self, v):
        lo, hi = self.xlim
        return self.x + (float(v) - lo) / (hi - lo) * self.w

    def py(self, v):
        lo, hi = self.ylim
        return self.y + self.h - (float(v) - lo) / (hi - lo) * self.h

    def frame(self):
        f = self.fig
        f.add('<rect x="%s" y="%s" width="%s" height="%s" fill="none" '
              'stroke="#444444" stroke-width="1"/>'
              % (_f(self.x), _f(self.y), _f(self.w), _f(self.h)))
        for t in nice_ticks(*self.xlim):
            xp = self.px(t)
            if xp < self.x - 0.5 or xp > self.x + self.w + 0.5:
                continue
            f.add('<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="#444444" '
                  'stroke-width="1"/>' % (_f(xp), _f(self.y + self.h),
                                          _f(xp), _f(self.y + self.h + 4)))
            f.text(xp, self.y + self.h + 16, fmt_tick(t), size=10,
                   anchor="middle")
        for t in nice_ticks(*self.ylim):
            yp = self.py(t)
            if yp < self.y - 0.5 or yp > self.y + self.h + 0.5:
                continue
            f.add('<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="#444444" '
                  'stroke-width="1"/>' % (_f(self.x - 4), _f(yp),
                                          _f(self.x), _f(yp)))
            f.text(self.x - 7, yp + 3.5, fmt_tick(t), size=10, anchor="end")
        if self.title:
            f.text(self.x + self.w / 2.0, self.y - 8, self.title, size=12,
                   anchor="middle")
        if self.xlabel:
            f.text(self.x + self.w / 2.0, self.y + self.h + 32, self.xlabel,
                   size=11, anchor="middle")
        if self.ylabel:
            f.text(self.x - 42, self.y + self.h / 2.0, self.ylabel, size=11,
                   anchor="middle", rotate=-90)

    def polyline(self, xs, ys, color, width=1.0, opacity=1.0, dash=None):
        pts = " ".join("%s,%s" % (_f(self.px(a)), _f(self.py(b)))
                       for a, b in zip(xs, ys))
        extra = ' stroke-dasharray="%s"' % dash if dash else ""
        self.fig.add('<polyline points="%s" fill="none" stroke="%s" '
                     'stroke-width="%s" stroke-opacity="%s"%s/>'
                     % (pts, color, _f(width), _f(opacity), extra))

    def vline(self, x, color, width=1.0, dash=None):
        extra = ' stroke-dasharray="%s"' % dash if dash else ""
        self.fig.add('<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="%s" '
                     'stroke-width="%s"%s/>'
                     % (_f(self.px(x)), _f(self.y), _f(self.px(x)),
                        _f(self.y + self.h), color, _f(width), extra))

    def circle(self, x, y, r, color, opacity=1.0):
        self.fig.add('<circle cx="%s" cy="%s" r="%s" fill="%s" '
                     'fill-opacity="%s"/>'
                     % (_f(self.px(x)), _f(self.py(y)), _f(r), color,
                        _f(opacity)))

    def vbar(self, x0, x1, height, color, opacity=1.0):
        xp0, xp1 = self.px(x0), self.px(x1)
        yp = self.py(height)
        self.fig.add('<rect x="%s" y="%s" width="%s" height="%s" fill="%s" '
                     'fill-opacity="%s"/>'
                     % (_f(xp0), _f(yp), _f(xp1 - xp0),
                        _f(self.y + self.h - yp), color, _f(opacity)))


def kde(samples, grid_n=128):
    """Gaussian kernel density with Silverman bandwidth.

    Returns (grid, density), or None when the sample is degenerate (the
    caller should draw a spike instead).
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        return None
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    scale = min(sd, iqr / 1.34) if iqr > 0 else sd
    if scale <= 0:
        return None
    h = 0.9 * scale * n ** (-0.2)
    lo, hi = float(x.min()) - 3 * h, float(x.max()) + 3 * h
    grid = np.linspace(lo, hi, grid_n)
    z = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (n * h * math.sqrt(2 * math.pi))
    return grid, dens


def safe_name(name):
    """Filesystem-safe token for a parameter or variable name."""
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
