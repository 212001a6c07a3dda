"""Stacked nonlinear least-squares problem and its batched linearization.

Variables are laid out knot-major: for each time step, the robot block is
followed by each point agent's block. Residual blocks touch at most three
consecutive knots (second-order cliques) or couple two agents at the same
knot, so the normal equations are banded; the linearizer builds one fixed
sparse Jacobian structure and refills only the numeric data each iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import costs as C
from . import kinematics as kin
from .errors import DimensionMismatch, NonFiniteResidual
from .geometry import (ObstacleWorld, Rotation, log_so3_batch,
                       so3_left_jacobian_inverse_batch)


@dataclass(frozen=True)
class Layout:
    """Maps (agent, knot) pairs to slices of the stacked variable vector."""

    dims: tuple[int, ...]
    n_knots: int

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        offsets = np.concatenate([[0], np.cumsum(self.dims)])
        object.__setattr__(self, "_offsets", offsets)

    @property
    def block(self) -> int:
        return int(self._offsets[-1])

    @property
    def n_agents(self) -> int:
        return len(self.dims)

    @property
    def n_vars(self) -> int:
        return self.n_knots * self.block

    def start(self, agent: int, knot: int) -> int:
        return knot * self.block + int(self._offsets[agent])

    def sl(self, agent: int, knot: int) -> slice:
        s = self.start(agent, knot)
        return slice(s, s + self.dims[agent])

    def pack(self, trajs) -> np.ndarray:
        x = np.empty(self.n_vars)
        view = x.reshape(self.n_knots, self.block)
        for a, t in enumerate(trajs):
            view[:, self._offsets[a]:self._offsets[a] + self.dims[a]] = t
        return x

    def unpack(self, x) -> list[np.ndarray]:
        view = np.asarray(x).reshape(self.n_knots, self.block)
        return [view[:, self._offsets[a]:self._offsets[a] + self.dims[a]].copy()
                for a in range(self.n_agents)]

    def agent_view(self, x, agent: int) -> np.ndarray:
        view = x.reshape(self.n_knots, self.block)
        return view[:, self._offsets[agent]:self._offsets[agent] + self.dims[agent]]


@dataclass
class ProblemContext:
    """Shared static inputs the residual blocks evaluate against."""

    dt: float
    world: ObstacleWorld
    chains: dict = field(default_factory=dict)        # agent -> SerialChain
    point_radius: dict = field(default_factory=dict)  # agent -> meters
    r_hat: Rotation | None = None
    joint_eps: float = 0.05
    obstacle_margin: float = 0.0


@dataclass(frozen=True)
class NlsProblem:
    """Residual blocks over the stacked trajectory variables."""

    layout: Layout
    blocks: tuple[C.ResidualBlock, ...]
    context: ProblemContext
    fixed_agents: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "fixed_agents", frozenset(self.fixed_agents))
        touched = set()
        for b in self.blocks:
            for agent, knot in b.vars:
                if not (0 <= agent < self.layout.n_agents):
                    raise DimensionMismatch(f"block references agent {agent}")
                if not (0 <= knot < self.layout.n_knots):
                    raise DimensionMismatch(f"block references knot {knot}")
                touched.add((agent, knot))
        expected = {(a, t) for a in range(self.layout.n_agents)
                    for t in range(self.layout.n_knots)}
        missing = expected - touched
        if missing:
            raise ValueError(f"variables never touched by a residual: {sorted(missing)[:4]}")

    def with_fixed(self, agents) -> "NlsProblem":
        return replace(self, fixed_agents=frozenset(agents))

    def structure_key(self) -> tuple:
        return tuple((b.kind, b.vars, b.kernel) for b in self.blocks)


class _Group:
    """Blocks of one kind over one agent (or agent pair), batch-evaluated."""

    __slots__ = ("key", "agent", "other", "block_idx", "knots", "row_start",
                 "data_start", "rows_per", "nnz_per", "weights", "is_welsch",
                 "sigma", "welsch_idx", "targets", "radii", "row_idx", "data_idx")

    def __init__(self, key, agent, other=None):
        self.key = key
        self.agent = agent
        self.other = other
        self.block_idx = []
        self.knots = []
        self.row_start = []
        self.data_start = []
        self.rows_per = 0
        self.nnz_per = 0
        self.weights = None
        self.is_welsch = None
        self.sigma = None
        self.welsch_idx = None
        self.targets = []
        self.radii = None
        self.row_idx = None
        self.data_idx = None


def _diag_pattern(rows0, col0, d):
    rows = np.arange(rows0, rows0 + d)
    cols = np.arange(col0, col0 + d)
    return rows, cols


def _dense_pattern(rows0, col0, m, n):
    rows = np.repeat(np.arange(rows0, rows0 + m), n)
    cols = np.tile(np.arange(col0, col0 + n), m)
    return rows, cols


class Linearizer:
    """Compiles a block list into one sparse Jacobian refilled per iteration."""

    def __init__(self, problem: NlsProblem):
        self.problem = problem
        self.layout = problem.layout
        self.ctx = problem.context
        self._key = problem.structure_key()
        self._build()

    # -- structure ------------------------------------------------------------

    def _build(self):
        layout = self.layout
        ctx = self.ctx
        rows_list = []
        cols_list = []
        groups: dict = {}
        row_cursor = 0
        data_cursor = 0
        welsch_count = 0
        self._block_spans = []  # (row_start, rows, data_start, nnz) per block

        for bi, b in enumerate(self.problem.blocks):
            agent = b.vars[0][0]
            # the knot the residual is evaluated at (clique kinds store their
            # center; their Jacobian patterns still come from b.vars)
            if b.kind in ("velocity", "joint_vel_limit"):
                knot = (b.vars[0][1] + b.vars[1][1]) // 2
            elif b.kind == "acceleration":
                knot = b.vars[1][1]
            else:
                knot = b.vars[0][1]
            dim = layout.dims[agent]
            is_chain = agent in ctx.chains
            if b.kind == "anchor":
                key = ("anchor", agent)
                m, patterns = dim, [("diag", agent, knot)]
            elif b.kind == "joint_limit":
                key = ("joint_limit", agent)
                m, patterns = dim, [("diag", agent, knot)]
            elif b.kind == "joint_vel_limit":
                key = ("joint_vel_limit", agent)
                m = dim
                patterns = [("diag", agent, b.vars[0][1]),
                            ("diag", agent, b.vars[1][1])]
            elif b.kind == "velocity":
                key = ("velocity", agent)
                m = dim
                patterns = [("diag", agent, b.vars[0][1]),
                            ("diag", agent, b.vars[1][1])]
            elif b.kind == "acceleration":
                key = ("acceleration", agent)
                m = dim
                patterns = [("diag", agent, b.vars[0][1]),
                            ("diag", agent, b.vars[1][1]),
                            ("diag", agent, b.vars[2][1])]
            elif b.kind == "obstacle":
                if is_chain:
                    key = ("obstacle_chain", agent)
                    m = ctx.chains[agent].n_spheres
                    patterns = [("dense", agent, knot)]
                else:
                    key = ("obstacle_point", agent)
                    m = 1
                    patterns = [("dense", agent, knot)]
            elif b.kind == "orientation":
                key = ("orientation", agent)
                m = 3
                patterns = [("dense", agent, knot)]
            elif b.kind == "interaction_terminal" or (
                    b.kind == "sparse_reward" and b.target is None):
                a0, a1 = b.vars[0][0], b.vars[1][0]
                key = ("pair_diff", a0, a1)
                m = 3
                patterns = [("dense", a0, knot), ("diag", a1, b.vars[1][1])]
            elif b.kind in ("sparse_reward", "goal_attraction"):
                if is_chain:
                    key = ("ee_target", agent)
                    m = 3
                    patterns = [("dense", agent, knot)]
                else:
                    key = ("point_target", agent)
                    m = 3
                    patterns = [("diag", agent, knot)]
            else:  # pragma: no cover - guarded by ResidualBlock validation
                raise ValueError(f"unhandled kind {b.kind}")

            nnz_b = 0
            for kind_p, a_p, k_p in patterns:
                col0 = layout.start(a_p, k_p)
                if kind_p == "diag":
                    r_, c_ = _diag_pattern(row_cursor, col0, m)
                else:
                    r_, c_ = _dense_pattern(row_cursor, col0, m,
                                            layout.dims[a_p])
                rows_list.append(r_)
                cols_list.append(c_)
                nnz_b += len(r_)

            g = groups.get(key)
            if g is None:
                g = _Group(key, key[1], key[2] if len(key) > 2 else None)
                groups[key] = g
            g.block_idx.append(bi)
            g.knots.append(knot)
            g.row_start.append(row_cursor)
            g.data_start.append(data_cursor)
            g.rows_per = m
            g.nnz_per = nnz_b
            g.targets.append(b.target)
            self._block_spans.append((row_cursor, m, data_cursor, nnz_b))
            row_cursor += m
            data_cursor += nnz_b
            if b.kernel == C.KERNEL_WELSCH:
                welsch_count += 1

        self.total_rows = row_cursor
        self.total_nnz = data_cursor
        rows = np.concatenate(rows_list) if rows_list else np.zeros(0, int)
        cols = np.concatenate(cols_list) if cols_list else np.zeros(0, int)
        self._data_row = rows
        self._data_col = cols

        # fixed csr structure; the coo->csr permutation comes from sorting a
        # tagged copy (no duplicate (row, col) pairs exist by construction)
        tagged = sp.coo_matrix((np.arange(1, self.total_nnz + 1, dtype=float),
                                (rows, cols)),
                               shape=(self.total_rows, layout.n_vars)).tocsr()
        tagged.sum_duplicates()
        if tagged.nnz != self.total_nnz:
            raise AssertionError("duplicate jacobian entries in structure")
        self._perm = tagged.data.astype(np.int64) - 1
        self._J = sp.csr_matrix(
            (np.zeros(self.total_nnz), tagged.indices, tagged.indptr),
            shape=(self.total_rows, layout.n_vars))

        # per-group index arrays and parameter vectors
        self.groups = list(groups.values())
        welsch_cursor = 0
        self._welsch_sigma = np.zeros(welsch_count)
        self._welsch_group_rows = []
        for g in self.groups:
            g.block_idx = np.asarray(g.block_idx, dtype=np.int64)
            g.knots = np.asarray(g.knots, dtype=np.int64)
            g.row_start = np.asarray(g.row_start, dtype=np.int64)
            g.data_start = np.asarray(g.data_start, dtype=np.int64)
            g.row_idx = (g.row_start[:, None]
                         + np.arange(g.rows_per)[None, :]).ravel()
            g.data_idx = (g.data_start[:, None]
                          + np.arange(g.nnz_per)[None, :]).ravel()
            blocks = [self.problem.blocks[i] for i in g.block_idx]
            g.weights = np.array([b.weight for b in blocks], dtype=float)
            g.is_welsch = np.array([b.kernel == C.KERNEL_WELSCH for b in blocks])
            g.sigma = np.array([b.sigma for b in blocks], dtype=float)
            g.welsch_idx = np.full(len(blocks), -1, dtype=np.int64)
            for j, b in enumerate(blocks):
                if b.kernel == C.KERNEL_WELSCH:
                    g.welsch_idx[j] = welsch_cursor
                    self._welsch_sigma[welsch_cursor] = b.sigma
                    welsch_cursor += 1
            if g.targets and g.targets[0] is not None:
                g.targets = np.asarray(
                    [self.problem.blocks[i].target for i in g.block_idx])
            else:
                g.targets = None
            if g.key[0] == "obstacle_point":
                g.radii = np.array(
                    [self.ctx.point_radius[g.agent]] * len(g.block_idx))

        self.n_welsch = welsch_count
        self.welsch_w = np.ones(welsch_count)

        # constant jacobian entries written once into the template
        self._jdata_template = np.zeros(self.total_nnz)
        dt = self.ctx.dt
        for g in self.groups:
            kindname = g.key[0]
            d = self.layout.dims[g.agent]
            if kindname == "velocity":
                per = np.concatenate([np.full(d, -1.0 / (2 * dt)),
                                      np.full(d, 1.0 / (2 * dt))])
            elif kindname == "acceleration":
                per = np.concatenate([np.full(d, 1.0 / dt**2),
                                      np.full(d, -2.0 / dt**2),
                                      np.full(d, 1.0 / dt**2)])
            elif kindname == "anchor":
                per = np.ones(d)
            elif kindname == "point_target":
                per = np.ones(3)
            elif kindname == "pair_diff":
                per = np.zeros(g.nnz_per)
                per[-3:] = -1.0  # point-agent side of the difference
            else:
                continue
            self._jdata_template[g.data_idx] = np.tile(per, len(g.block_idx))

        # fixed-agent masking: data entries whose column is owned by a fixed agent
        col_in_block = self._data_col % self.layout.block
        owner = np.searchsorted(self.layout._offsets, col_in_block, side="right") - 1
        self._data_owner = owner.astype(np.int64)
        self._fixed_data_idx = np.nonzero(
            np.isin(self._data_owner, list(self.problem.fixed_agents))
        )[0] if self.problem.fixed_agents else np.zeros(0, dtype=np.int64)

        self._row_scale = np.ones(self.total_rows)
        self._rebuild_row_scale()

        # which kinematic products each linearize pass must compute
        kinds_present = {g.key[0] for g in self.groups}
        self._need_fk = any(a in self.ctx.chains
                            for g in self.groups for a in (g.agent,))
        self._need_centers = "obstacle_chain" in kinds_present
        self._need_ee = bool(kinds_present & {"orientation", "pair_diff",
                                              "ee_target"})
        self._free_mask = np.ones(self.layout.n_vars, bool)
        for a in self.problem.fixed_agents:
            view = self._free_mask.reshape(self.layout.n_knots, self.layout.block)
            off = self.layout._offsets
            view[:, off[a]:off[a] + self.layout.dims[a]] = False

    def rebind(self, problem: NlsProblem) -> "Linearizer":
        """Reuse this structure for a problem with identical block layout."""
        if (problem.structure_key() != self._key
                or problem.fixed_agents != self.problem.fixed_agents):
            return Linearizer(problem)
        self.problem = problem
        self.ctx = problem.context
        for g in self.groups:
            blocks = [problem.blocks[i] for i in g.block_idx]
            g.weights = np.array([b.weight for b in blocks], dtype=float)
            if g.targets is not None:
                g.targets = np.asarray([b.target for b in blocks])
        self.welsch_w = np.ones(self.n_welsch)
        self._rebuild_row_scale()
        return self

    # -- weights ---------------------------------------------------------------

    def set_welsch_weights(self, w) -> None:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_welsch,):
            raise DimensionMismatch("welsch weight vector has wrong length")
        self.welsch_w = w.copy()
        self._rebuild_row_scale()

    def _rebuild_row_scale(self):
        for g in self.groups:
            eff = g.weights.copy()
            if np.any(g.is_welsch):
                wi = g.welsch_idx[g.is_welsch]
                eff[g.is_welsch] = (g.weights[g.is_welsch] * self.welsch_w[wi]
                                    / (2.0 * g.sigma[g.is_welsch] ** 2))
            self._row_scale[g.row_idx] = np.repeat(np.sqrt(eff), g.rows_per)
        self._data_scale = self._row_scale[self._data_row]

    # -- evaluation --------------------------------------------------------

    def _kinematics(self, x, need_jac):
        """FK products for each chain agent, shared by the cost groups."""
        out = {}
        for agent, chain in self.ctx.chains.items():
            q = np.ascontiguousarray(self.layout.agent_view(x, agent))
            fk = kin.fk_batch(chain, q)
            entry = {"fk": fk, "ee_t": fk.ee_t, "ee_r": fk.ee_r}
            if self._need_centers:
                entry["centers"] = kin.skeleton_centers_batch(chain, fk)
                if need_jac:
                    entry["center_jac"] = kin.skeleton_jacobians_batch(
                        chain, fk, entry["centers"])
            if need_jac and self._need_ee:
                entry["ee_jac"] = kin.ee_point_jacobian_batch(fk)
                entry["rot_jac"] = kin.ee_rotation_jacobian_batch(fk)
            out[agent] = entry
        return out

    def _evaluate(self, x, need_jac):
        """Fill raw residuals (and jacobian data), return bookkeeping arrays."""
        layout = self.layout
        ctx = self.ctx
        r = np.zeros(self.total_rows)
        jdata = self._jdata_template.copy() if need_jac else None
        kin_cache = self._kinematics(x, need_jac) if self._need_fk else {}
        true_cost = 0.0
        sqnorms_by_group = []

        for g in self.groups:
            kindname = g.key[0]
            a = g.agent
            xa = layout.agent_view(x, a)
            d = layout.dims[a]
            k = g.knots
            if kindname == "anchor":
                vals = xa[k] - g.targets
            elif kindname == "velocity":
                vals = (xa[k + 1] - xa[k - 1]) / (2.0 * ctx.dt)
            elif kindname == "acceleration":
                vals = (xa[k + 1] - 2.0 * xa[k] + xa[k - 1]) / ctx.dt**2
            elif kindname == "joint_limit":
                lim = ctx.chains[a].joint_limits
                vals, slope = C.hinge(xa[k], lim[:, 0], lim[:, 1], ctx.joint_eps)
                if need_jac:
                    jdata[g.data_idx] = slope.ravel()
            elif kindname == "joint_vel_limit":
                vmax = ctx.chains[a].velocity_limits
                vel = (xa[k + 1] - xa[k - 1]) / (2.0 * ctx.dt)
                vals, slope = C.hinge(vel, -vmax, vmax, ctx.joint_eps)
                if need_jac:
                    jdata[g.data_idx] = np.concatenate(
                        [-slope / (2 * ctx.dt), slope / (2 * ctx.dt)],
                        axis=1).ravel()
            elif kindname == "obstacle_chain":
                cache = kin_cache[a]
                centers = cache["centers"][k]
                gk, sk = centers.shape[0], centers.shape[1]
                dist, grad = ctx.world.distance_and_gradient(
                    centers.reshape(-1, 3))
                radii = ctx.chains[a].sphere_radii + ctx.obstacle_margin
                vals = np.maximum(0.0, np.tile(radii, gk) - dist).reshape(gk, sk)
                if need_jac:
                    active = (vals > 0.0).astype(float)
                    jc = cache["center_jac"][k]
                    jrows = -np.einsum("gsi,gsin->gsn",
                                       grad.reshape(gk, sk, 3), jc)
                    jrows *= active[:, :, None]
                    jdata[g.data_idx] = jrows.ravel()
            elif kindname == "obstacle_point":
                p = xa[k]
                dist, grad = ctx.world.distance_and_gradient(p)
                vals = np.maximum(0.0, g.radii + ctx.obstacle_margin
                                  - dist)[:, None]
                if need_jac:
                    active = (vals[:, 0] > 0.0).astype(float)
                    jdata[g.data_idx] = (-grad * active[:, None]).ravel()
            elif kindname == "orientation":
                cache = kin_cache[a]
                r_hat = ctx.r_hat.m if ctx.r_hat is not None else np.eye(3)
                rel = np.einsum("ji,gjk->gik", r_hat, cache["ee_r"][k])
                vals = log_so3_batch(rel)
                if need_jac:
                    jl = so3_left_jacobian_inverse_batch(vals)
                    jw = np.einsum("ji,gjn->gin", r_hat, cache["rot_jac"][k])
                    jdata[g.data_idx] = np.einsum("gij,gjn->gin", jl, jw).ravel()
            elif kindname == "pair_diff":
                cache = kin_cache[a]
                xo = layout.agent_view(x, g.other)
                vals = cache["ee_t"][k] - xo[k]
                if need_jac:
                    jc = cache["ee_jac"][k]
                    n = layout.dims[a]
                    di = g.data_idx.reshape(len(k), g.nnz_per)
                    jdata[di[:, :3 * n].ravel()] = jc.reshape(len(k), -1).ravel()
            elif kindname == "ee_target":
                cache = kin_cache[a]
                vals = cache["ee_t"][k] - g.targets
                if need_jac:
                    jdata[g.data_idx] = cache["ee_jac"][k].ravel()
            elif kindname == "point_target":
                vals = xa[k] - g.targets
            else:  # pragma: no cover
                raise AssertionError(kindname)

            r[g.row_idx] = vals.ravel()
            sq = np.einsum("ij,ij->i", vals, vals)
            sqnorms_by_group.append(sq)
            welsch = g.is_welsch
            if np.any(welsch):
                true_cost += float(np.sum(
                    g.weights[welsch]
                    * (1.0 - np.exp(-sq[welsch] / (2.0 * g.sigma[welsch] ** 2)))))
            if not np.all(welsch):
                sqd = ~welsch
                true_cost += float(np.sum(g.weights[sqd] * sq[sqd]))

        return r, jdata, true_cost, sqnorms_by_group

    def residuals(self, x):
        """Scaled residual vector, true objective, surrogate objective."""
        r, _, true_cost, _ = self._evaluate(x, need_jac=False)
        r_scaled = r * self._row_scale
        if not np.all(np.isfinite(r_scaled)):
            raise NonFiniteResidual("residual vector contains NaN or inf")
        return r_scaled, true_cost, float(r_scaled @ r_scaled)

    def linearize(self, x):
        """Scaled sparse Jacobian, scaled residuals, true and surrogate cost."""
        r, jdata, true_cost, _ = self._evaluate(x, need_jac=True)
        r_scaled = r * self._row_scale
        jdata = jdata * self._data_scale
        if len(self._fixed_data_idx):
            jdata[self._fixed_data_idx] = 0.0
        if not (np.all(np.isfinite(r_scaled)) and np.all(np.isfinite(jdata))):
            raise NonFiniteResidual("residual or jacobian contains NaN or inf")
        self._J.data[:] = jdata[self._perm]
        return self._J, r_scaled, true_cost, float(r_scaled @ r_scaled)

    def true_cost(self, x) -> float:
        _, tc, _ = self.residuals(x)
        return tc

    def welsch_distances(self, x) -> np.ndarray:
        """Raw residual norm of every welsch-kernel block, in block order."""
        _, _, _, sqnorms = self._evaluate(x, need_jac=False)
        out = np.zeros(self.n_welsch)
        for g, sq in zip(self.groups, sqnorms):
            sel = g.welsch_idx >= 0
            if np.any(sel):
                out[g.welsch_idx[sel]] = np.sqrt(sq[sel])
        return out

    def welsch_sigmas(self) -> np.ndarray:
        return self._welsch_sigma.copy()

    # -- reference path for tests -------------------------------------------

    def block_values(self, x) -> list[np.ndarray]:
        """Raw residual vector of every block, in block order."""
        r, _, _, _ = self._evaluate(x, need_jac=False)
        return [r[rs:rs + m].copy() for rs, m, _, _ in self._block_spans]

    def evaluate_block(self, index: int, x) -> C.CostEvaluation:
        """Residual, per-variable Jacobians, and cost of a single block."""
        block = self.problem.blocks[index]
        r, jdata, _, _ = self._evaluate(x, need_jac=True)
        rs, m, ds, nnz = self._block_spans[index]
        raw = r[rs:rs + m].copy()
        dense = np.zeros((m, sum(self.layout.dims[a] for a, _ in block.vars)))
        rows = self._data_row[ds:ds + nnz] - rs
        col0 = {v: sum(self.layout.dims[a] for a, _ in block.vars[:i])
                for i, v in enumerate(block.vars)}
        cols_global = self._data_col[ds:ds + nnz]
        for e in range(nnz):
            cg = cols_global[e]
            for v in block.vars:
                s = self.layout.sl(*v)
                if s.start <= cg < s.stop:
                    dense[rows[e], col0[v] + cg - s.start] = jdata[ds + e]
                    break
        jacs = {}
        off = 0
        for v in block.vars:
            d = self.layout.dims[v[0]]
            jacs[v] = dense[:, off:off + d].copy()
            off += d
        return C.CostEvaluation(raw, jacs, C.block_cost(block, raw))
