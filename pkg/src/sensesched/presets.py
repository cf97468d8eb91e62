"""Built-in workloads: face tracking, 2-D navigation (with/without detector), VR."""

from __future__ import annotations

from dataclasses import replace

from .model import (ChainSpec, ComputeModel, Constants, DagSpec, NodeSpec, ObjectiveSpec,
                    SpecError, SubchainSpec, enumerate_chains)

PRESETS = ("facetrack", "nav2d", "nav2d_yolo", "vr")

VSYNC_HZ = 120.0


def _with_chains(spec: DagSpec) -> DagSpec:
    return replace(spec, chains=tuple(enumerate_chains(spec)))


def facetrack(cores: int = 1, deterministic: bool = False) -> DagSpec:
    """Camera (25 ms) -> detector (55-60 ms) -> planner (1 ms), one subchain."""
    detector = ComputeModel.constant(60.0) if deterministic else ComputeModel.uniform(55.0, 60.0)
    nodes = (
        NodeSpec("camera", ComputeModel.constant(25.0)),
        NodeSpec("detector", detector),
        NodeSpec("planner", ComputeModel.constant(1.0)),
    )
    spec = DagSpec(
        nodes=nodes,
        edges=(("camera", "detector"), ("detector", "planner")),
        subchains=(SubchainSpec("track", ("camera", "detector", "planner")),),
        chains=(),
        objective=ObjectiveSpec(response_time_weight={"track": 1.0}),
        cores=cores,
        name="facetrack",
    )
    spec = _with_chains(spec)
    return replace(spec, chains=(ChainSpec("track", ("track",), spec.chains[0].node_path),))


def _nav_nodes(drift: bool, gm_slope: float = 1.5, gp_slope: float = 2.0) -> list[NodeSpec]:
    gl_full = ComputeModel.spike(ComputeModel.uniform(8.0, 12.0), rate=0.1, cost=60.0)
    gl = ComputeModel.bimodal(0.6, ComputeModel.uniform(0.8, 1.2), gl_full)
    gm_base = ComputeModel.uniform(120.0, 150.0)
    gp_base = ComputeModel.uniform(160.0, 200.0)
    gm = ComputeModel.drift(gm_base, gm_slope) if drift else gm_base
    gp = ComputeModel.drift(gp_base, gp_slope) if drift else gp_base
    return [
        NodeSpec("scan", ComputeModel.constant(0.5)),
        NodeSpec("lm", ComputeModel.uniform(2.0, 2.5)),
        NodeSpec("lp", ComputeModel.uniform(1.2, 1.5)),
        NodeSpec("gl", gl, streaming=True),
        NodeSpec("gm", gm),
        NodeSpec("gp", gp),
        NodeSpec("nc", ComputeModel.uniform(1.5, 2.0)),
    ]


_NAV_EDGES = (("scan", "lm"), ("lm", "lp"), ("scan", "gl"), ("gl", "gm"), ("gm", "gp"),
              ("gl", "gp"), ("gl", "nc"), ("gp", "nc"), ("nc", "lp"))

_NAV_SUBCHAINS = (SubchainSpec("local", ("scan", "lm", "lp")), SubchainSpec("gl", ("gl",)),
                  SubchainSpec("gm", ("gm",)), SubchainSpec("gp", ("gp",)),
                  SubchainSpec("nc", ("nc",)))

_NAV_CHAIN_IDS = {
    ("local",): "local",
    ("gl", "nc", "local"): "gl_nc",
    ("gl", "gp", "nc", "local"): "gl_gp_nc",
    ("gl", "gm", "gp", "nc", "local"): "gl_gm_gp_nc",
    ("cam", "yolo"): "yolo",
}


def _named(spec: DagSpec) -> DagSpec:
    chains = tuple(ChainSpec(_NAV_CHAIN_IDS[c.subchain_ids], c.subchain_ids, c.node_path)
                   for c in enumerate_chains(spec))
    return replace(spec, chains=chains)


def nav2d(cores: int = 1, drift: bool = False) -> DagSpec:
    """Scan->LM->LP local subchain plus GL/GM/GP/NC subchains; GL streams."""
    rt = {"local": 1.0, "gl_nc": 0.005, "gl_gp_nc": 0.005, "gl_gm_gp_nc": 0.005}
    objective = ObjectiveSpec(
        response_time_weight=rt,
        w3s={"gl": 0.5},
        node_throughput_hz={"gl": (0.0, 50.0), "gp": (0.0, 1.0)},
        priority=("local", "gl", "nc", "gp", "gm"),
        stealing=("gl",),
    )
    spec = DagSpec(nodes=tuple(_nav_nodes(drift)), edges=_NAV_EDGES, subchains=_NAV_SUBCHAINS,
                   chains=(), objective=objective, cores=cores,
                   constants=Constants(max_reciprocal=256), name="nav2d")
    return _named(spec)


def nav2d_yolo(cores: int = 1, drift: bool = True) -> DagSpec:
    """nav2d plus a camera-preprocess -> detector chain with a tiny weight."""
    base = nav2d(cores, drift=drift)
    # the map grows during the run: GM/GP slow down faster than in plain nav2d
    nodes = tuple(_nav_nodes(drift, gm_slope=4.0, gp_slope=6.0)) + (
        NodeSpec("cam", ComputeModel.uniform(20.0, 25.0)),
        NodeSpec("yolo", ComputeModel.uniform(180.0, 220.0)),
    )
    o = base.objective
    objective = replace(
        o,
        response_time_weight={**o.response_time_weight, "yolo": 0.0005},
        # freshness floors: GL at least 2 Hz, GM/GP at least 0.5 Hz
        node_throughput_hz={**o.node_throughput_hz, "gl": (2.0, 50.0), "gp": (0.5, 1.0),
                            "gm": (0.5, 1e9)},
        priority=("local", "gl", "nc", "gp", "gm", "cam", "yolo"),
    )
    spec = replace(base, nodes=nodes, edges=base.edges + (("cam", "yolo"),),
                   subchains=base.subchains + (SubchainSpec("cam", ("cam",)),
                                               SubchainSpec("yolo", ("yolo",))),
                   objective=objective, chains=(), name="nav2d_yolo")
    return _named(spec)


def vr(cores: int = 1) -> DagSpec:
    """IMU->Int (unscheduled, 200 Hz), Camera->VIO, Render, Timewarp pinned to vsync."""
    nodes = (
        NodeSpec("imu", ComputeModel.constant(0.01), explicitly_scheduled=False, rate_hz=200.0),
        NodeSpec("int", ComputeModel.constant(0.01), explicitly_scheduled=False, rate_hz=200.0),
        NodeSpec("camera", ComputeModel.constant(1.0)),
        NodeSpec("vio", ComputeModel.truncnormal(9.0, 2.0, 5.0, 14.0)),
        NodeSpec("render", ComputeModel.uniform(3.0, 4.0)),
        NodeSpec("timewarp", ComputeModel.uniform(1.2, 1.5)),
    )
    edges = (("imu", "int"), ("imu", "vio"), ("camera", "vio"), ("vio", "int"),
             ("int", "render"), ("int", "timewarp"), ("render", "timewarp"))
    subchains = (SubchainSpec("imu_int", ("imu", "int")), SubchainSpec("cam_vio", ("camera", "vio")),
                 SubchainSpec("render", ("render",)), SubchainSpec("timewarp", ("timewarp",)))
    spec = DagSpec(nodes=nodes, edges=edges, subchains=subchains, chains=(),
                   objective=ObjectiveSpec(), cores=cores, name="vr")
    names = {
        ("imu_int", "timewarp"): "rot_mtp",
        ("imu_int", "render", "timewarp"): "trans_mtp",
    }
    chains = []
    rt = {}
    for c in enumerate_chains(spec):
        cid = names.get(c.subchain_ids, "vio_" + "_".join(c.subchain_ids[1:]) if c.subchain_ids[0] == "imu_int"
                        else "cam_" + "_".join(c.subchain_ids[1:]))
        chains.append(ChainSpec(cid, c.subchain_ids, c.node_path))
        rt[cid] = {"rot_mtp": 1.0, "trans_mtp": 0.5}.get(cid, 0.005)
    objective = ObjectiveSpec(
        response_time_weight=rt,
        node_throughput_hz={"timewarp": (VSYNC_HZ, VSYNC_HZ), "render": (0.0, VSYNC_HZ)},
        priority=("timewarp", "cam_vio", "render"),
        stealing=("timewarp",),
    )
    return replace(spec, chains=tuple(chains), objective=objective)


def preset(name: str, **kw) -> DagSpec:
    try:
        builder = {"facetrack": facetrack, "nav2d": nav2d, "nav2d_yolo": nav2d_yolo, "vr": vr}[name]
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return builder(**kw)
