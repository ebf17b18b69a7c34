"""Two-stage parameter learning and the trained model bundle.

Stage one is generative hard-EM: per epoch, MPE inference on each positive
image accumulates edge traversal counts, and each sum edge is reset to its
smoothed count share. Stage two is discriminative: for sampled
(positive, negative) image pairs whose margin constraint is violated, edge
weights move along the max-network gradient (traversal-count difference over
the weight), scaled by the violation. Joint mode accumulates the gradients
of edges shared between class networks over pairs from every participating
class before applying them, keeping tied weights in lockstep.

Scores are log root values of the sum network throughout; with deep
scope-completed networks the linear values underflow, and rankings and
margins only need differences of logs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ImageRecord
from .errors import (
    ContractViolationError,
    InsufficientDataError,
    PruneError,
    TrainingError,
    VocabularyMismatchError,
)
from .inference import mpe, to_mpn, traversal_difference
from .network import (
    PRODUCT,
    SUM,
    WEIGHT_FLOOR,
    Network,
    evaluate,
    indicators_for_network,
    load_network,
    renormalize_sums,
    save_network,
    validate,
)
from .structure import (
    StructureConfig,
    build_class_network,
    build_flat_network,
    build_naive_network,
    count_gadgets,
    find_shared_structures,
    learn_partition_tree,
)

MODES = ("spn", "fs-spn", "ihs-spn", "jhs-spn")

# Hinge slacks are clamped: an image a network scores as exactly zero
# (log -inf) would otherwise produce an infinite slack, and no weight update
# can fix a structural zero anyway.
SLACK_CAP = 10.0


def _hinge_slack(v_pos: float, v_neg: float) -> float:
    if math.isinf(v_pos) and math.isinf(v_neg):
        diff = 0.0
    else:
        diff = v_pos - v_neg
    return float(min(max(0.0, 1.0 - diff), SLACK_CAP))


@dataclass
class TrainConfig:
    """Training knobs; margin is fixed at 1 by the objective."""

    generative_epochs: int = 15
    smoothing: float = 0.1
    prune_threshold: float = 1e-6
    learning_rate: float = 0.02
    margin: float = 1.0
    max_pairs_per_epoch: int = 2000
    discriminative_epochs: int = 10
    early_stop_patience: int = 3
    seed: int = 0
    mode: str = "ihs-spn"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing must be nonnegative")
        if self.prune_threshold < WEIGHT_FLOOR:
            raise ValueError(f"prune_threshold must be >= weight floor {WEIGHT_FLOOR}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class MarginRecord:
    """One sampled cross-class pair and its hinge slack."""

    positive_id: str
    negative_id: str
    slack: float


# --------------------------------------------------------------- generative


def generative_train(network: Network, positives: list[ImageRecord], config: TrainConfig,
                     log_lines: list[str] | None = None) -> Network:
    """Hard-EM over the class positives.

    Every epoch runs full-evidence MPE per image and accumulates traversal
    counts; at the epoch end each sum edge weight becomes
    (count + alpha) / (sibling counts + alpha * fanout). Stops when the mean
    log max-network root value improves by less than 1e-6 or at the epoch
    cap. With alpha = 0, untraversed edges drop to exactly zero.
    """
    if not positives:
        raise InsufficientDataError("generative training needs at least one positive image")
    mpn = to_mpn(network)
    alpha = config.smoothing
    sums = [i for i, nd in enumerate(network.nodes) if nd.kind == SUM]
    previous = None
    for epoch in range(config.generative_epochs):
        counts = np.zeros(network.num_edges, dtype=np.int64)
        total_log = 0.0
        for image in positives:
            result = mpe(mpn, indicators_for_network(network, image))
            counts += result.traversal.counts
            total_log += result.root_log_value
        mean_log = total_log / len(positives)
        if log_lines is not None:
            log_lines.append(
                f"epoch {epoch} class {network.class_label} stage generative "
                f"mean_log {mean_log:.9g}"
            )
        for node in sums:
            edges = network.child_edges(node)
            c = counts[edges].astype(np.float64)
            denom = c.sum() + alpha * len(edges)
            if denom > 0:
                network.edge_weight[edges] = (c + alpha) / denom
        if previous is not None and mean_log - previous < 1e-6:
            break
        previous = mean_log
    return network


# ------------------------------------------------------------------ pruning


def prune(network: Network, threshold: float) -> Network:
    """Remove sum edges at or below the threshold, then unreachable nodes.

    Remaining sum weights are renormalized and the result is revalidated.
    Refuses to act when removal would leave the root childless."""
    keep_edge = np.ones(network.num_edges, dtype=bool)
    for edge in range(network.num_edges):
        parent = int(network.edge_parent[edge])
        if network.nodes[parent].kind == SUM and network.edge_weight[edge] <= threshold:
            keep_edge[edge] = False

    # cascade: drop internal nodes whose children all vanished
    changed = True
    while changed:
        changed = False
        child_counts = np.zeros(network.num_nodes, dtype=np.int64)
        for edge in np.flatnonzero(keep_edge):
            child_counts[network.edge_parent[edge]] += 1
        for node in range(network.num_nodes):
            if network.nodes[node].kind not in (SUM, PRODUCT):
                continue
            if child_counts[node] == 0:
                if node == network.root:
                    raise PruneError(
                        "pruning would delete the root's last child; lower the threshold"
                    )
                incoming = (network.edge_child == node) & keep_edge
                if incoming.any():
                    keep_edge[incoming] = False
                    changed = True

    # reachability sweep from the root over surviving edges
    adj: dict[int, list[int]] = {}
    for edge in np.flatnonzero(keep_edge):
        adj.setdefault(int(network.edge_parent[edge]), []).append(int(network.edge_child[edge]))
    reachable = set()
    stack = [network.root]
    while stack:
        node = stack.pop()
        if node in reachable:
            continue
        reachable.add(node)
        stack.extend(adj.get(node, ()))

    node_map = {}
    new_nodes = []
    for node in range(network.num_nodes):
        if node in reachable:
            node_map[node] = len(new_nodes)
            new_nodes.append(network.nodes[node])
    edge_parent, edge_child, edge_weight = [], [], []
    for edge in np.flatnonzero(keep_edge):
        parent, child = int(network.edge_parent[edge]), int(network.edge_child[edge])
        if parent in reachable and child in reachable:
            edge_parent.append(node_map[parent])
            edge_child.append(node_map[child])
            edge_weight.append(float(network.edge_weight[edge]))

    pruned = Network(
        nodes=new_nodes,
        edge_parent=edge_parent,
        edge_child=edge_child,
        edge_weight=edge_weight,
        root=node_map[network.root],
        class_label=network.class_label,
        partitions=network.partitions,
        region_of={node_map[n]: r for n, r in network.region_of.items() if n in reachable},
    )
    for node in range(pruned.num_nodes):
        if pruned.nodes[node].kind == SUM:
            edges = pruned.child_edges(node)
            if len(edges):
                total = pruned.edge_weight[edges].sum()
                if total <= 0:
                    raise PruneError(f"sum node {node} lost all weight mass")
                pruned.edge_weight[edges] /= total
    report = validate(pruned)
    if not report.ok:
        raise PruneError(f"pruned network fails validation: {report}")
    return pruned


# ------------------------------------------------------- discriminative core


def _check_finite_root(network: Network, result) -> None:
    root_log = result.root_log_value
    if math.isnan(root_log):
        bad = next(
            (int(n) for n in network.topological_order() if math.isnan(result.log_values[n])),
            network.root,
        )
        raise TrainingError(f"NaN value at node {bad} ({network.nodes[bad].kind})")


def _margin_update(network: Network, image_pos, image_neg, rate: float,
                   deferred: dict | None = None, update_counts: dict | None = None) -> MarginRecord:
    """One stochastic margin step; returns the pair's MarginRecord.

    Edges listed in `deferred` are not touched; their gradient contributions
    accumulate there instead (joint training applies them later). Satisfied
    pairs change nothing."""
    ind_pos = indicators_for_network(network, image_pos)
    ind_neg = indicators_for_network(network, image_neg)
    res_pos = evaluate(network, ind_pos)
    _check_finite_root(network, res_pos)
    res_neg = evaluate(network, ind_neg)
    _check_finite_root(network, res_neg)
    slack = _hinge_slack(res_pos.root_log_value, res_neg.root_log_value)
    record = MarginRecord(image_pos.id, image_neg.id, slack)
    if slack == 0.0:
        return record
    if math.isinf(res_pos.root_log_value):
        # the positive image scores a structural zero; no gradient exists
        return record

    mpn = to_mpn(network)
    counts_pos = mpe(mpn, ind_pos).traversal
    counts_neg = mpe(mpn, ind_neg).traversal
    delta = traversal_difference(counts_pos, counts_neg)
    touched = set()
    for edge, dt in delta.items():
        parent = int(network.edge_parent[edge])
        if network.nodes[parent].kind != SUM:
            continue
        weight = max(float(network.edge_weight[edge]), WEIGHT_FLOOR)
        step = rate * slack * dt / weight
        if update_counts is not None:
            update_counts[edge] = update_counts.get(edge, 0) + 1
        if deferred is not None and edge in deferred:
            deferred[edge] += step
            continue
        network.edge_weight[edge] = max(WEIGHT_FLOOR, network.edge_weight[edge] + step)
        touched.add(parent)
    if touched:
        renormalize_sums(network, sorted(touched))
    return record


def discriminative_step(network: Network, image_pos, image_neg, rate: float) -> MarginRecord:
    """Public single-pair update: hinge slack from the sum network, gradient
    from the max network, weights floored and renormalized per sum node."""
    return _margin_update(network, image_pos, image_neg, rate)


# ----------------------------------------------------------- training driver


def _split_fit_dev(records, rng):
    """Deterministic 80/20 split for early-stopping margin monitoring."""
    idx = rng.permutation(len(records))
    cut = max(1, int(round(0.8 * len(records))))
    fit = [records[i] for i in idx[:cut]]
    dev = [records[i] for i in idx[cut:]] or fit
    return fit, dev


def _mean_dev_margin(network: Network, dev_pos, dev_neg) -> float:
    total = 0.0
    n = 0
    for image_pos in dev_pos:
        ind_pos = indicators_for_network(network, image_pos)
        vp = evaluate(network, ind_pos).root_log_value
        for image_neg in dev_neg:
            ind_neg = indicators_for_network(network, image_neg)
            vn = evaluate(network, ind_neg).root_log_value
            total += _hinge_slack(vp, vn)
            n += 1
    return total / max(n, 1)


def _discriminative_stage(networks: dict[str, Network], dataset: Dataset, config: TrainConfig,
                          shared_groups=None, log_lines: list[str] | None = None,
                          update_stats: dict | None = None) -> None:
    """Margin training over all classes; joint handling of shared edges.

    Each class consumes its own seeded stream, so runs with no shared edges
    are bit-identical to fully independent per-class training. Shared-edge
    gradients accumulate across every class's pairs within an epoch and are
    applied to all tied copies at the epoch end."""
    classes = sorted(networks)
    shared_map: dict[str, dict[int, int]] = {klass: {} for klass in classes}
    groups = shared_groups or []
    for group_idx, group in enumerate(groups):
        for net_idx, edge in group:
            shared_map[classes[net_idx]][edge] = group_idx

    by_class_fit: dict[str, list] = {}
    by_class_dev: dict[str, list] = {}
    for klass in classes:
        rng = np.random.default_rng((config.seed, 11, hash_str(klass)))
        fit, dev = _split_fit_dev(dataset.by_class(klass), rng)
        by_class_fit[klass] = fit
        by_class_dev[klass] = dev

    best = {klass: math.inf for klass in classes}
    stall = {klass: 0 for klass in classes}
    active = set(classes)

    for epoch in range(config.discriminative_epochs):
        if not active:
            break
        group_acc = [0.0] * len(groups)
        group_hits = [0] * len(groups)
        for klass in classes:
            if klass not in active:
                continue
            network = networks[klass]
            rng = np.random.default_rng((config.seed, 13, hash_str(klass), epoch))
            positives = by_class_fit[klass]
            negatives = [r for k in classes if k != klass for r in by_class_fit[k]]
            if not positives or not negatives:
                raise InsufficientDataError(f"class {klass!r} lacks positives or negatives")
            n_pairs = min(config.max_pairs_per_epoch, len(positives) * len(negatives))
            deferred = {edge: 0.0 for edge in shared_map[klass]} if groups else None
            violations = 0
            slack_total = 0.0
            update_counts = (
                update_stats.setdefault(klass, {}) if update_stats is not None else None
            )
            for _ in range(n_pairs):
                image_pos = positives[int(rng.integers(len(positives)))]
                image_neg = negatives[int(rng.integers(len(negatives)))]
                record = _margin_update(
                    network, image_pos, image_neg, config.learning_rate,
                    deferred=deferred, update_counts=update_counts,
                )
                slack_total += record.slack
                if record.slack > 0:
                    violations += 1
            if deferred:
                for edge, step in deferred.items():
                    if step != 0.0:
                        group_idx = shared_map[klass][edge]
                        group_acc[group_idx] += step
                        group_hits[group_idx] += 1
            if log_lines is not None:
                log_lines.append(
                    f"epoch {epoch} class {klass} stage discriminative "
                    f"mean_margin {slack_total / max(n_pairs, 1):.9g} "
                    f"violation_rate {violations / max(n_pairs, 1):.9g}"
                )
        # apply accumulated shared-edge gradients to every tied copy
        touched_by_class: dict[str, set[int]] = {klass: set() for klass in classes}
        for group_idx, group in enumerate(groups):
            step = group_acc[group_idx]
            if step == 0.0:
                continue
            for net_idx, edge in group:
                klass = classes[net_idx]
                network = networks[klass]
                network.edge_weight[edge] = max(WEIGHT_FLOOR, network.edge_weight[edge] + step)
                touched_by_class[klass].add(int(network.edge_parent[edge]))
        for klass, nodes in touched_by_class.items():
            if nodes:
                renormalize_sums(networks[klass], sorted(nodes))
        if update_stats is not None and groups:
            update_stats.setdefault("group_hits", [0] * len(groups))
            for group_idx, hits in enumerate(group_hits):
                update_stats["group_hits"][group_idx] += hits

        for klass in list(active):
            margin = _mean_dev_margin(networks[klass], by_class_dev[klass],
                                      [r for k in classes if k != klass for r in by_class_dev[k]])
            if margin < best[klass] - 1e-9:
                best[klass] = margin
                stall[klass] = 0
            else:
                stall[klass] += 1
                if stall[klass] >= config.early_stop_patience:
                    active.discard(klass)


def hash_str(text: str) -> int:
    """Stable small hash for seeding per-class rng streams."""
    import hashlib

    return int.from_bytes(hashlib.sha1(text.encode()).digest()[:4], "big")


def joint_train(networks: dict[str, Network], shared_groups, dataset: Dataset,
                config: TrainConfig, log_lines: list[str] | None = None,
                update_stats: dict | None = None) -> dict[str, Network]:
    """Discriminative stage with shared-edge gradients pooled across classes."""
    if config.mode != "jhs-spn":
        raise ContractViolationError("joint training requires mode 'jhs-spn'")
    _discriminative_stage(networks, dataset, config, shared_groups=shared_groups,
                          log_lines=log_lines, update_stats=update_stats)
    return networks


# ---------------------------------------------------------------- the bundle


@dataclass
class ModelBundle:
    vocabulary_size: int
    classes: list[str]
    networks: dict[str, Network]
    mode: str
    shared_groups: list = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def network_list(self) -> list[Network]:
        return [self.networks[k] for k in self.classes]


def _harmonize_shared_weights(networks: dict[str, Network], classes, groups) -> None:
    """Average each shared group's weights so tied copies start identical."""
    touched: dict[str, set[int]] = {k: set() for k in classes}
    for group in groups:
        weights = [float(networks[classes[idx]].edge_weight[edge]) for idx, edge in group]
        mean = sum(weights) / len(weights)
        for idx, edge in group:
            klass = classes[idx]
            networks[klass].edge_weight[edge] = mean
            touched[klass].add(int(networks[klass].edge_parent[edge]))
    for klass, nodes in touched.items():
        if nodes:
            renormalize_sums(networks[klass], sorted(nodes))


def train_all(dataset: Dataset, structure_config: StructureConfig,
              train_config: TrainConfig) -> ModelBundle:
    """Full pipeline for one mode: structure, generative stage, pruning,
    discriminative stage (joint for jhs-spn)."""
    mode = train_config.mode
    classes = sorted(set(dataset.classes))
    log_lines: list[str] = []
    stats: dict = {"gadgets": {}, "pairs_modeled": {}}

    networks: dict[str, Network] = {}
    for klass in classes:
        if mode == "spn":
            net = build_naive_network(dataset, klass, structure_config)
        elif mode == "fs-spn":
            net = build_flat_network(dataset, klass, structure_config)
        else:
            tree = learn_partition_tree(dataset, klass, structure_config)
            net = build_class_network(tree, dataset, klass, structure_config)
        networks[klass] = net

    for klass in classes:
        positives = dataset.by_class(klass)
        generative_train(networks[klass], positives, train_config, log_lines)
        before = networks[klass].num_edges
        networks[klass] = prune(networks[klass], train_config.prune_threshold)
        log_lines.append(
            f"class {klass} stage prune removed {before - networks[klass].num_edges} edges"
        )

    for klass in classes:
        stats["gadgets"][klass] = count_gadgets(networks[klass])
        stats["pairs_modeled"][klass] = len(networks[klass].pair_universe)

    shared_groups = []
    update_stats: dict = {}
    if mode == "jhs-spn":
        shared = find_shared_structures([networks[k] for k in classes])
        shared_groups = shared.groups
        _harmonize_shared_weights(networks, classes, shared_groups)
        log_lines.append(f"shared-edge groups: {len(shared_groups)}")
        joint_train(networks, shared_groups, dataset, train_config, log_lines, update_stats)
    else:
        _discriminative_stage(networks, dataset, train_config, shared_groups=None,
                              log_lines=log_lines, update_stats=update_stats)

    return ModelBundle(
        vocabulary_size=dataset.vocabulary_size,
        classes=classes,
        networks=networks,
        mode=mode,
        shared_groups=shared_groups,
        log_lines=log_lines,
        stats={**stats, "updates": update_stats},
    )


# ------------------------------------------------------------ classification


def classify(image: ImageRecord, bundle: ModelBundle):
    """Per-class log scores and the argmax label (ties to the lowest class id)."""
    for det in image.detections:
        if not (0 <= det.part < bundle.vocabulary_size):
            raise VocabularyMismatchError(
                f"image {image.id} uses part {det.part}, vocabulary has {bundle.vocabulary_size}"
            )
    scores = {}
    for klass in bundle.classes:
        network = bundle.networks[klass]
        indicators = indicators_for_network(network, image)
        scores[klass] = evaluate(network, indicators).root_log_value
    best = max(scores.values())
    # deterministic tie-break: lowest class id
    label = next(k for k in sorted(scores) if scores[k] == best)
    return scores, label


# ------------------------------------------------------------------- bundles


def save_bundle(bundle: ModelBundle, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = [
        "bundle v1",
        f"t {bundle.vocabulary_size}",
        f"mode {bundle.mode}",
        f"classes {len(bundle.classes)}",
    ]
    for klass in bundle.classes:
        filename = f"{klass}.spn"
        save_network(bundle.networks[klass], os.path.join(out_dir, filename))
        manifest.append(f"class {klass} {filename}")
    for group in bundle.shared_groups:
        body = " ".join(f"{bundle.classes[idx]}:{edge}" for idx, edge in group)
        manifest.append(f"shared-group {body}")
    with open(os.path.join(out_dir, "manifest"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest) + "\n")
    if bundle.log_lines:
        with open(os.path.join(out_dir, "train.log"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(bundle.log_lines) + "\n")


def load_bundle(path) -> ModelBundle:
    manifest_path = os.path.join(path, "manifest")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "bundle v1":
        raise VocabularyMismatchError(f"{manifest_path} is not a model bundle manifest")
    vocab = 0
    mode = "ihs-spn"
    classes: list[str] = []
    networks: dict[str, Network] = {}
    shared_groups = []
    for line in lines[1:]:
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "t":
            vocab = int(tokens[1])
        elif tokens[0] == "mode":
            mode = tokens[1]
        elif tokens[0] == "class" and len(tokens) == 3:
            classes.append(tokens[1])
            networks[tokens[1]] = load_network(os.path.join(path, tokens[2]))
        elif tokens[0] == "shared-group":
            group = []
            for chunk in tokens[1:]:
                klass, edge = chunk.rsplit(":", 1)
                group.append((classes.index(klass), int(edge)))
            shared_groups.append(group)
    return ModelBundle(
        vocabulary_size=vocab,
        classes=classes,
        networks=networks,
        mode=mode,
        shared_groups=shared_groups,
    )
