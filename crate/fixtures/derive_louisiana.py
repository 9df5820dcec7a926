import json, sys
from collections import deque, defaultdict
d = json.load(open(sys.argv[1]))
sx, sy = d['transform']['scale']; tx, ty = d['transform']['translate']
arcs = []
for a in d['arcs']:
    x = y = 0; pts = []
    for dx, dy in a:
        x += dx; y += dy
        pts.append((x, y))
    arcs.append(pts)
def arc_pts(i):
    return arcs[i] if i >= 0 else arcs[~i][::-1]
geoms = [g for g in d['objects']['counties']['geometries'] if g['id'].startswith('22')]
arcsets, ptsets, cents = {}, {}, {}
for g in geoms:
    polys = g['arcs'] if g['type'] == 'MultiPolygon' else [g['arcs']]
    used = set(); pts = set(); A = Cx = Cy = 0.0
    for poly in polys:
        for k, ring in enumerate(poly):
            coords = []
            for ai in ring:
                used.add(ai if ai >= 0 else ~ai)
                p = arc_pts(ai)
                coords.extend(p if not coords else p[1:])
                pts.update(p)
            xy = [(x*sx+tx, y*sy+ty) for x, y in coords]
            for (x0, y0), (x1, y1) in zip(xy, xy[1:]):
                c = x0*y1 - x1*y0
                A += c; Cx += (x0+x1)*c; Cy += (y0+y1)*c
    A /= 2
    name = g['properties']['name']
    arcsets[name] = used; ptsets[name] = pts
    cents[name] = (Cy/(6*A), Cx/(6*A))
names = sorted(arcsets)
def graph(kind):
    E = set()
    for i, a in enumerate(names):
        for b in names[i+1:]:
            s = (arcsets[a] & arcsets[b]) if kind == 'rook' else (ptsets[a] & ptsets[b])
            if s: E.add((a, b))
    return E
def maxd(E):
    adj = defaultdict(set)
    for a, b in E: adj[a].add(b); adj[b].add(a)
    m = 0
    for s in names:
        dist = {s: 0}; q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in dist: dist[v] = dist[u]+1; q.append(v)
        assert len(dist) == 64
        m = max(m, max(dist.values()))
    return m
R, Q = graph('rook'), graph('queen')
print('rook', len(R), maxd(R), 'queen', len(Q), maxd(Q), file=sys.stderr)
print(sorted(Q - R), file=sys.stderr)
out = sys.argv[2]
with open(out + '/louisiana_nodes.csv', 'w') as f:
    f.write('label,latitude,longitude\n')
    for n in names:
        f.write(f'{n},{cents[n][0]:.6f},{cents[n][1]:.6f}\n')
with open(out + '/louisiana_edges.csv', 'w') as f:
    f.write('label_a,label_b\n')
    for a, b in sorted(Q):
        f.write(f'{a},{b}\n')
