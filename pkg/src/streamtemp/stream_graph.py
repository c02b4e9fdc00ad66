"""River segment networks and the stream-distance adjacency matrix.

A network is a directed graph over river segments: an ordered pair
(i, j) is connected when i drains into j (possibly through intermediate
segments). `dist[i, j]` holds the along-stream distance in km between
the outlets of i and j for those pairs, 0 on the diagonal, and +inf
where the pair is hydrologically unconnected. The +inf sentinel lives
in memory only; CSV files list finite pairs.

Adjacency weights come from pooling distance statistics over all source
tasks ("unified" standardization) and squashing standardized distances
through a reverse sigmoid, so one weight scale is shared across
watersheds and resolutions.
"""

import csv

import numpy as np

from .errors import DataError

UNCONNECTED = np.inf


class SegmentNetwork:
    """Immutable directed segment graph with pairwise stream distances."""

    def __init__(self, segment_ids, dist, watershed, scale):
        self.segment_ids = list(segment_ids)
        self.dist = np.asarray(dist, dtype=np.float64)
        self.watershed = watershed
        self.scale = scale
        n = len(self.segment_ids)
        if self.dist.shape != (n, n):
            raise DataError(f"distance matrix shape {self.dist.shape} != ({n}, {n})")
        if len(set(self.segment_ids)) != n:
            raise DataError("duplicate segment ids")
        if not np.all(np.diag(self.dist) == 0.0):
            raise DataError("nonzero self-distance")
        finite = np.isfinite(self.dist)
        if np.any(self.dist[finite] < 0):
            raise DataError("negative stream distance")
        self.index = {sid: k for k, sid in enumerate(self.segment_ids)}

    @property
    def n_segments(self):
        return len(self.segment_ids)

    def support(self):
        """Boolean [n, n] mask: support[i, j] iff j is upstream of i or j == i.

        Row i enumerates the in-neighborhood N(i) used for aggregation,
        so influence flows in the direction water does.
        """
        return np.isfinite(self.dist).T

    def upstream_distance(self):
        """d[i, j] = stream distance from in-neighbor j down to i (inf off support)."""
        return self.dist.T.copy()

    def direct_upstream(self):
        """Adjacency lists of immediate upstream segments per segment.

        Pair (j, i) is a direct edge when j drains into i with no listed
        segment in between.
        """
        n = self.n_segments
        finite = np.isfinite(self.dist)
        ups = [[] for _ in range(n)]
        for j in range(n):
            for i in range(n):
                if i == j or not finite[j, i]:
                    continue
                direct = True
                for w in range(n):
                    if w != i and w != j and finite[j, w] and finite[w, i]:
                        direct = False
                        break
                if direct:
                    ups[i].append(j)
        return ups

    def limit_reach(self, max_hops):
        """Copy of the network keeping only upstream pairs within max_hops edges."""
        if max_hops is None:
            return self
        n = self.n_segments
        ups = self.direct_upstream()
        hops = np.full((n, n), np.inf)
        np.fill_diagonal(hops, 0.0)
        for i in range(n):
            frontier = [(j, 1) for j in ups[i]]
            while frontier:
                j, d = frontier.pop()
                if d < hops[j, i]:
                    hops[j, i] = d
                    frontier.extend((u, d + 1) for u in ups[j])
        dist = self.dist.copy()
        dist[hops > max_hops] = UNCONNECTED
        return SegmentNetwork(self.segment_ids, dist, self.watershed, self.scale)


class DistanceStats:
    """Frozen mean/std (population) of pooled finite stream distances."""

    def __init__(self, mean, std, n_pairs):
        if std <= 0:
            raise DataError("zero pooled distance variance")
        self.mean = float(mean)
        self.std = float(std)
        self.n_pairs = int(n_pairs)

    def __repr__(self):
        return f"DistanceStats(mean={self.mean:.4f}, std={self.std:.4f}, n={self.n_pairs})"


class AdjacencyMatrix:
    """Reverse-sigmoid distance weights on the upstream support.

    values[i, j] = 1 / (1 + exp((dist(j->i) - mean) / std)) on support,
    exactly 0 elsewhere. Rows are *not* normalized here; row-softmax
    happens inside the gating step of the prediction network.
    """

    def __init__(self, values, support):
        self.values = np.asarray(values, dtype=np.float64)
        self.support = np.asarray(support, dtype=bool)


def build_distance_stats(networks, unified=True):
    """Pool finite distances (self-pairs included) into frozen stats.

    With unified=True a single DistanceStats covers all given networks,
    which is what lets adjacency values encode relative scale; with
    unified=False (the "per network" ablation) a list of per-network
    stats is returned in input order.
    """
    if not networks:
        raise DataError("no networks given")
    if not unified:
        return [build_distance_stats([net]) for net in networks]
    pooled = np.concatenate([net.dist[np.isfinite(net.dist)] for net in networks])
    if pooled.size < 2:
        raise DataError("need at least two finite distance pairs")
    return DistanceStats(pooled.mean(), pooled.std(), pooled.size)


def adjacency_from_distances(network, stats):
    """Eq.-style reverse-distance adjacency on the upstream support."""
    support = network.support()
    d = network.upstream_distance()
    z = np.zeros_like(d)
    z[support] = (d[support] - stats.mean) / stats.std
    z = np.clip(z, -500.0, 500.0)
    values = np.where(support, 1.0 / (1.0 + np.exp(z)), 0.0)
    return AdjacencyMatrix(values, support)


def load_network(segments_path, distances_path):
    """Build a SegmentNetwork from the two CSV schemas.

    segments.csv: segment_id,watershed,scale[,char_*...]
    distances.csv: from_id,to_id,distance_km for connected ordered
    pairs (from upstream of to). Unlisted pairs are unconnected;
    self-distances are implicit zeros.
    """
    ids = []
    watershed = scale = None
    with open(segments_path, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = row["segment_id"]
            if sid in ids:
                raise DataError(f"duplicate segment id {sid!r} in {segments_path}")
            ids.append(sid)
            if watershed is None:
                watershed, scale = row["watershed"], row["scale"]
            elif (row["watershed"], row["scale"]) != (watershed, scale):
                raise DataError("mixed watershed/scale tags in one segments file")
    if not ids:
        raise DataError(f"no segments in {segments_path}")
    n = len(ids)
    index = {sid: k for k, sid in enumerate(ids)}
    dist = np.full((n, n), UNCONNECTED)
    np.fill_diagonal(dist, 0.0)
    with open(distances_path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                i = index[row["from_id"]]
                j = index[row["to_id"]]
            except KeyError as exc:
                raise DataError(f"unknown segment id {exc} in {distances_path}") from None
            d = float(row["distance_km"])
            if d < 0:
                raise DataError(f"negative distance {d} for {row['from_id']}->{row['to_id']}")
            if i == j:
                if d != 0.0:
                    raise DataError(f"nonzero self-distance for {row['from_id']}")
                continue
            dist[i, j] = d
    return SegmentNetwork(ids, dist, watershed, scale)


def write_network(network, segments_path, distances_path):
    """Emit the CSV schemas consumed by `load_network` (finite pairs only)."""
    with open(segments_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "watershed", "scale"])
        for sid in network.segment_ids:
            w.writerow([sid, network.watershed, network.scale])
    with open(distances_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_id", "to_id", "distance_km"])
        for i, si in enumerate(network.segment_ids):
            for j, sj in enumerate(network.segment_ids):
                if i != j and np.isfinite(network.dist[i, j]):
                    w.writerow([si, sj, repr(float(network.dist[i, j]))])
