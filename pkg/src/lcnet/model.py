"""Joint neural calibration of per-population Lee-Carter models.

One network fits every population at once. Two embedding-fed dense subnets
produce the age profile and the age sensitivity for a (country, gender)
pair; a third subnet encodes the year's log-rate curve into a scalar period
index; the output combines them exactly like the classic model:
prediction = profile + sensitivity * index.

The curve encoder comes in three flavours: a dense layer (fcn), a
locally-connected layer with one filter per 4-age group (lcn), or a
convolution sharing one filter across groups (cnn). Training minimizes
either the squared error on MinMax-scaled log-rates or the Poisson
likelihood kernel on death counts. After training, per-population
parameters are read off the subnets and renormalized; forecasting then
proceeds through the usual random walk with drift.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import GENDERS, minmax_fit_transform
from .errors import ConfigError, DataError, TrainingDivergedError
from .lc_svd import LcParameters, normalize_constraints
from .nn import LayerSpec, NetworkWeights, Var
from .nn import autograd as ag
from .nn.layerspec import output_positions

VARIANTS = ("fcn", "lcn", "cnn")
LOSSES = ("mse-scaled", "poisson")


@dataclass(frozen=True)
class NeuralLcConfig:
    """Architecture and training settings.

    The curve encoder's output width is pinned to ``hidden`` and its final
    compression layer always has one unit. For lcn/cnn the kernel/stride
    must tile the age grid into exactly ``hidden`` receptive fields.
    """

    variant: str = "fcn"
    embed_country_a: int = 5
    embed_gender_a: int = 5
    embed_country_b: int = 5
    embed_gender_b: int = 5
    hidden: int = 25
    kernel: int = 4
    stride: int = 4
    activation_a: str = "linear"
    activation_b: str = "linear"
    activation_k1: str = "linear"
    activation_k2: str = "linear"
    dropout_a: float = 0.05
    dropout_b: float = 0.05
    dropout_k: float = 0.05
    loss: str = "mse-scaled"
    epochs: int = 2000
    batch_size: int | None = 32
    seed: int = 0


@dataclass
class TrainingRun:
    """Everything a finished training produces.

    ``wall_seconds`` is informational only and deliberately left out of the
    serialized artifact so reruns stay byte-identical.
    """

    config: NeuralLcConfig
    seed: int
    countries: tuple
    genders: tuple
    n_ages: int
    loss_curve: list
    weights: NetworkWeights
    parameters: dict = field(default_factory=dict)
    scaling: tuple | None = None
    n_examples: int = 0
    wall_seconds: float = 0.0


def build_network(config, n_countries, n_genders, n_ages):
    """Layer graph for the three-subnet architecture."""
    if config.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {config.variant!r}")
    if config.loss not in LOSSES:
        raise ConfigError(f"unknown loss {config.loss!r}")
    if min(n_countries, n_genders, n_ages, config.hidden) < 1:
        raise ConfigError("sizes must be positive")
    layers = []
    for subnet in ("a", "b"):
        q_c = getattr(config, f"embed_country_{subnet}")
        q_g = getattr(config, f"embed_gender_{subnet}")
        act = getattr(config, f"activation_{subnet}")
        layers += [
            LayerSpec("embedding", f"emb_{subnet}_country", vocab=n_countries, dim=q_c),
            LayerSpec("embedding", f"emb_{subnet}_gender", vocab=n_genders, dim=q_g),
            LayerSpec("concat", f"concat_{subnet}"),
            LayerSpec("dropout", f"drop_{subnet}", rate=getattr(config, f"dropout_{subnet}")),
            LayerSpec("dense", f"dense_{subnet}", units=n_ages, in_dim=q_c + q_g,
                      activation=act),
        ]
    if config.variant == "fcn":
        k1 = LayerSpec("dense", "k1", units=config.hidden, in_dim=n_ages,
                       activation=config.activation_k1)
    else:
        positions = output_positions(n_ages, config.kernel, config.stride)
        if positions != config.hidden:
            raise ConfigError(
                f"kernel {config.kernel}/stride {config.stride} give "
                f"{positions} receptive fields, but hidden = {config.hidden}"
            )
        kind = "lcn1d" if config.variant == "lcn" else "conv1d"
        k1 = LayerSpec(kind, "k1", in_dim=n_ages, kernel=config.kernel,
                       stride=config.stride, filters=1,
                       activation=config.activation_k1)
    layers += [
        k1,
        LayerSpec("dropout", "drop_k", rate=config.dropout_k),
        LayerSpec("dense", "k2", units=1, in_dim=config.hidden,
                  activation=config.activation_k2),
        LayerSpec("scalar-multiply-add", "combine"),
    ]
    return layers


def _weight_shapes(config, n_countries, n_genders, n_ages):
    shapes = []
    for subnet in ("a", "b"):
        q_c = getattr(config, f"embed_country_{subnet}")
        q_g = getattr(config, f"embed_gender_{subnet}")
        shapes += [
            (f"emb_{subnet}_country", (n_countries, q_c)),
            (f"emb_{subnet}_gender", (n_genders, q_g)),
            (f"dense_{subnet}_weights", (n_ages, q_c + q_g)),
            (f"dense_{subnet}_bias", (n_ages,)),
        ]
    if config.variant == "fcn":
        shapes += [("k1_weights", (config.hidden, n_ages)), ("k1_bias", (config.hidden,))]
    elif config.variant == "lcn":
        shapes += [
            ("k1_weights", (config.hidden, config.kernel)),
            ("k1_bias", (config.hidden,)),
        ]
    else:
        shapes += [("k1_weights", (config.kernel,)), ("k1_bias", (1,))]
    shapes += [("k2_weights", (1, config.hidden)), ("k2_bias", (1,))]
    return shapes


class LeeCarterNet:
    """Runtime network bound to a population vocabulary."""

    def __init__(self, config, countries, n_ages=100, weights=None,
                 genders=GENDERS):
        self.config = config
        self.countries = tuple(countries)
        self.genders = tuple(genders)
        self.n_ages = int(n_ages)
        self.layers = build_network(
            config, len(self.countries), len(self.genders), self.n_ages
        )
        shapes = _weight_shapes(
            config, len(self.countries), len(self.genders), self.n_ages
        )
        if weights is None:
            weights = NetworkWeights(shapes)
        else:
            expected = {name: tuple(shape) for name, shape in shapes}
            if weights.shapes != expected:
                raise ConfigError("weights do not match the architecture")
        self.weights = weights
        if self.weights.size != nn.count_parameters(self.layers):
            raise ConfigError(
                f"weight store size {self.weights.size} != analytic count "
                f"{nn.count_parameters(self.layers)}"
            )
        self._country_index = {c: i for i, c in enumerate(self.countries)}
        self._gender_index = {g: i for i, g in enumerate(self.genders)}

    @property
    def parameter_count(self):
        return nn.count_parameters(self.layers)

    def country_index(self, country):
        try:
            return self._country_index[country]
        except KeyError:
            raise KeyError(f"country {country!r} not in the training vocabulary")

    def gender_index(self, gender):
        return self._gender_index[gender]

    def initialize(self, rng):
        """Glorot-uniform dense/lcn/conv kernels, zero biases, small uniform
        embeddings; draw order follows the parameter layout, so a seed fixes
        the weights bit-exactly."""
        w = self.weights

        def glorot(name, fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w.view(name)[...] = rng.uniform(-limit, limit, w.shapes[name])

        for subnet in ("a", "b"):
            for table in (f"emb_{subnet}_country", f"emb_{subnet}_gender"):
                w.view(table)[...] = rng.uniform(-0.05, 0.05, w.shapes[table])
            n_in = w.shapes[f"dense_{subnet}_weights"][1]
            glorot(f"dense_{subnet}_weights", n_in, self.n_ages)
            w.view(f"dense_{subnet}_bias")[...] = 0.0
        if self.config.variant == "fcn":
            glorot("k1_weights", self.n_ages, self.config.hidden)
        else:
            glorot("k1_weights", self.config.kernel, 1)
        w.view("k1_bias")[...] = 0.0
        glorot("k2_weights", self.config.hidden, 1)
        w.view("k2_bias")[...] = 0.0
        return self

    def _forward(self, country_idx, gender_idx, curves, train=False, rng=None):
        """Recorded batched forward pass; returns (output Var, param leaves)."""
        cfg = self.config
        pv = {name: Var.param(self.weights.view(name)) for name in self.weights.names}
        curves = Var.const(np.atleast_2d(curves))
        country_idx = np.asarray(country_idx)
        gender_idx = np.asarray(gender_idx)

        za = ag.concat(
            ag.embedding(pv["emb_a_country"], country_idx),
            ag.embedding(pv["emb_a_gender"], gender_idx),
        )
        za = ag.dropout(za, cfg.dropout_a, train, rng)
        profile = ag.dense(za, pv["dense_a_weights"], pv["dense_a_bias"],
                           cfg.activation_a)

        zb = ag.concat(
            ag.embedding(pv["emb_b_country"], country_idx),
            ag.embedding(pv["emb_b_gender"], gender_idx),
        )
        zb = ag.dropout(zb, cfg.dropout_b, train, rng)
        sensitivity = ag.dense(zb, pv["dense_b_weights"], pv["dense_b_bias"],
                               cfg.activation_b)

        if cfg.variant == "fcn":
            hidden = ag.dense(curves, pv["k1_weights"], pv["k1_bias"],
                              cfg.activation_k1)
        elif cfg.variant == "lcn":
            hidden = ag.lcn1d(curves, pv["k1_weights"], pv["k1_bias"],
                              cfg.kernel, cfg.stride, cfg.activation_k1)
        else:
            hidden = ag.conv1d(curves, pv["k1_weights"], pv["k1_bias"],
                               cfg.kernel, cfg.stride, cfg.activation_k1)
        hidden = ag.dropout(hidden, cfg.dropout_k, train, rng)
        index = ag.dense(hidden, pv["k2_weights"], pv["k2_bias"],
                         cfg.activation_k2)

        return ag.scalar_multiply_add(profile, sensitivity, index), pv

    def forward_batch(self, country_idx, gender_idx, curves):
        """Eval-mode predictions, shape (n, n_ages)."""
        out, _ = self._forward(country_idx, gender_idx, curves, train=False)
        return out.value

    def forward_curve(self, country, gender, curve):
        """Eval-mode prediction for one labelled curve, shape (n_ages,)."""
        curve = np.asarray(curve, dtype=float)
        if curve.shape != (self.n_ages,):
            raise ValueError(f"curve must have shape ({self.n_ages},)")
        out = self.forward_batch(
            np.array([self.country_index(country)]),
            np.array([self.gender_index(gender)]),
            curve[None, :],
        )
        return out[0]

    def age_profile(self, country, gender):
        """Subnet-a output for one population (eval mode)."""
        za = np.concatenate([
            nn.embedding_lookup(self.weights.view("emb_a_country"),
                                self.country_index(country)),
            nn.embedding_lookup(self.weights.view("emb_a_gender"),
                                self.gender_index(gender)),
        ])
        return nn.dense_forward(za, self.weights.view("dense_a_weights"),
                                self.weights.view("dense_a_bias"),
                                self.config.activation_a)

    def age_sensitivity(self, country, gender):
        """Subnet-b output for one population (eval mode)."""
        zb = np.concatenate([
            nn.embedding_lookup(self.weights.view("emb_b_country"),
                                self.country_index(country)),
            nn.embedding_lookup(self.weights.view("emb_b_gender"),
                                self.gender_index(gender)),
        ])
        return nn.dense_forward(zb, self.weights.view("dense_b_weights"),
                                self.weights.view("dense_b_bias"),
                                self.config.activation_b)

    def period_index(self, curves):
        """Subnet-k scalar for each curve row (eval mode)."""
        curves = np.atleast_2d(np.asarray(curves, dtype=float))
        cfg = self.config
        w = self.weights
        if cfg.variant == "fcn":
            hidden = nn.dense_forward(curves, w.view("k1_weights"),
                                      w.view("k1_bias"), cfg.activation_k1)
        elif cfg.variant == "lcn":
            hidden = nn.lcn1d_forward(curves, w.view("k1_weights"),
                                      w.view("k1_bias"), cfg.kernel, cfg.stride,
                                      cfg.activation_k1)
        else:
            hidden = nn.conv1d_forward(curves, w.view("k1_weights"),
                                       float(w.view("k1_bias")[0]), cfg.kernel,
                                       cfg.stride, cfg.activation_k1)
        out = nn.dense_forward(hidden, w.view("k2_weights"), w.view("k2_bias"),
                               cfg.activation_k2)
        return out[:, 0]


def _training_arrays(panel, config, net):
    """Flatten the panel's training cells into example arrays."""
    rows = {"country": [], "gender": [], "curve": [], "deaths": [], "exposures": []}
    for pop in panel.population_ids():
        surf = panel.surfaces[pop]
        cols = np.nonzero(surf.years <= panel.train_max_year)[0]
        if config.loss == "poisson":
            if surf.deaths is None or surf.exposures is None:
                raise DataError(
                    f"{pop.label()}: the Poisson loss needs deaths and exposures"
                )
            sub_d = surf.deaths[:, cols]
            sub_e = surf.exposures[:, cols]
            if not (np.all(np.isfinite(sub_d)) and np.all(np.isfinite(sub_e))
                    and np.all(sub_e > 0) and np.all(sub_d >= 0)):
                raise DataError(
                    f"{pop.label()}: incomplete death/exposure counts; exclude "
                    "this population before fitting the Poisson loss"
                )
        ci = net.country_index(pop.country)
        gi = net.gender_index(pop.gender)
        for j in cols:
            rows["country"].append(ci)
            rows["gender"].append(gi)
            rows["curve"].append(surf.log_rates[:, j])
            if config.loss == "poisson":
                rows["deaths"].append(surf.deaths[:, j])
                rows["exposures"].append(surf.exposures[:, j])
    out = {
        "country": np.array(rows["country"], dtype=np.int64),
        "gender": np.array(rows["gender"], dtype=np.int64),
        "curve": np.array(rows["curve"], dtype=float),
    }
    if config.loss == "poisson":
        out["deaths"] = np.array(rows["deaths"], dtype=float)
        out["exposures"] = np.array(rows["exposures"], dtype=float)
    return out


def train(panel, config):
    """Fit the network on a panel's training years.

    Deterministic given the seed: initialization, batch shuffling, and
    dropout all draw from one seeded generator. Returns a TrainingRun with
    the per-epoch mean training loss, final weights, and extracted
    normalized per-population parameters.
    """
    started = time.perf_counter()
    countries = tuple(sorted({pop.country for pop in panel.surfaces}))
    net = LeeCarterNet(config, countries, n_ages=panel.ages.size)
    rng = np.random.default_rng(config.seed)
    net.initialize(rng)

    scaling = None
    if config.loss == "mse-scaled":
        scaling = panel.scaling or minmax_fit_transform(panel).scaling
    examples = _training_arrays(panel, config, net)
    n = examples["curve"].shape[0]
    if config.loss == "mse-scaled":
        lo, hi = scaling
        targets = (examples["curve"] - lo) / (hi - lo)

    adam = nn.init_adam(net.weights.size)
    batch_size = config.batch_size or n

    def batch_loss_var(idx, train_mode):
        out, pv = net._forward(
            examples["country"][idx], examples["gender"][idx],
            examples["curve"][idx], train=train_mode, rng=rng,
        )
        if config.loss == "mse-scaled":
            return ag.mse_loss(out, targets[idx]), pv
        return ag.poisson_loss(
            out, examples["deaths"][idx], examples["exposures"][idx]
        ), pv

    loss_curve = []
    if config.epochs == 0:
        loss, _ = batch_loss_var(np.arange(n), train_mode=False)
        loss_curve.append(_per_example(loss.value, n, config.loss))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            try:
                loss, pv = batch_loss_var(idx, train_mode=True)
            except DataError as err:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}: {err}", epoch=epoch
                ) from err
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}", epoch=epoch
                )
            ag.backward(loss)
            grads = ag.gradient_array(pv, net.weights)
            if not np.all(np.isfinite(grads)):
                raise TrainingDivergedError(
                    f"non-finite gradient at epoch {epoch}", epoch=epoch
                )
            nn.adam_step(adam, net.weights.flat, grads)
            total += value * (idx.size if config.loss == "mse-scaled" else 1.0)
        loss_curve.append(total / n)

    run = TrainingRun(
        config=config,
        seed=config.seed,
        countries=countries,
        genders=net.genders,
        n_ages=panel.ages.size,
        loss_curve=loss_curve,
        weights=net.weights,
        scaling=scaling,
        n_examples=n,
        wall_seconds=time.perf_counter() - started,
    )
    run.parameters = extract_parameters(run, panel)
    return run


def _per_example(value, n, loss):
    return float(value) if loss == "mse-scaled" else float(value) / n


def net_from_run(run):
    return LeeCarterNet(
        run.config, run.countries, n_ages=run.n_ages, weights=run.weights,
        genders=run.genders,
    )


def extract_parameters(run, panel):
    """Read per-population Lee-Carter parameters off the trained subnets.

    The age profile and sensitivity come from the embedding subnets; the
    period index is each training-year curve pushed through the curve
    encoder. For the scaled-response loss the profile and index are mapped
    back to the log scale (profile*(max-min)+min and index*(max-min); the
    sensitivity is unchanged). Every population is then renormalized.
    """
    net = net_from_run(run)
    out = {}
    for pop in panel.population_ids():
        surf = panel.surfaces[pop]
        cols = np.nonzero(surf.years <= panel.train_max_year)[0]
        a = net.age_profile(pop.country, pop.gender)
        b = net.age_sensitivity(pop.country, pop.gender)
        k = net.period_index(surf.log_rates[:, cols].T)
        if run.config.loss == "mse-scaled":
            lo, hi = run.scaling
            a = a * (hi - lo) + lo
            k = k * (hi - lo)
        out[pop] = normalize_constraints(
            LcParameters(
                a=a, b=b, k=k, population=pop,
                ages=surf.ages.copy(), years=surf.years[cols].copy(),
            )
        )
    return out


def poisson_loss(net, country_idx, gender_idx, curves, deaths, exposures):
    """Eval-mode Poisson loss sum(E*exp(pred) - D*pred) over a batch."""
    pred = net.forward_batch(country_idx, gender_idx, curves)
    with np.errstate(over="ignore"):
        fitted = exposures * np.exp(pred)
    if not np.all(np.isfinite(fitted)):
        raise DataError("overflow in exp inside the Poisson loss")
    return float(np.sum(fitted - deaths * pred))
