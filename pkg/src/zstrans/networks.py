"""The seven networks and the AdaIN fusion primitive.

Roles:

- ``VisionEncoder``    image -> domain-specific feature vector
- ``AttributeEncoder`` (attribute, noise) -> domain-specific feature vector
- ``Classifier``       feature -> seen-class logits (one affine layer)
- ``FeatureCritic``    (feature, attribute) -> scalar critic score
- ``ImageCritic``      image -> (patch critic map, predicted feature); the
  two heads share one convolutional trunk
- ``ContentEncoder``   image -> spatial content map (instance-normalized,
  so domain-specific statistics are stripped)
- ``Generator``        (content map, style feature) -> image in [0, 1],
  conditioning injected through AdaIN inside every residual block

Two scale profiles: "desk" builds small nets for fast CPU experiments;
"paper" uses a 50-layer residual backbone for the vision encoder,
2048-dim features, and 16-block content/generator stacks at 128 px.

Normalization choices: the vision encoder uses GroupNorm (batch-size
independent, no running statistics, keeps the within-group channel
statistics that carry domain style); the content encoder uses
InstanceNorm to discard per-channel style; critics use no
normalization; the generator's upsampling stack uses no normalization
so the statistics injected by AdaIN survive to the output.

Images enter every network in [0, 1] and are mapped to [-1, 1]
internally.  All initialization is seeded through ``build_bundle``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch
from torch import nn

from .config import NetConfig

ADAIN_EPS = 1e-5

NETWORK_NAMES = ("vision_enc", "attr_enc", "content_enc", "generator",
                 "classifier", "feat_critic", "img_critic")

ADAM_BETAS = (0.5, 0.999)


def adaptive_instance_norm(content: torch.Tensor, gamma: torch.Tensor,
                           beta: torch.Tensor, eps: float = ADAIN_EPS) -> torch.Tensor:
    """Normalize each channel of each sample over its spatial positions,
    then scale by gamma and shift by beta.

    content: (B, C, H, W).  gamma, beta: (B, C) or (C,).  Variance is
    biased (mean of squared deviations); eps guards the H*W = 1 case.
    """
    if content.dim() != 4:
        raise ValueError(f"content must be (B, C, H, W), got {tuple(content.shape)}")
    b, c = content.shape[0], content.shape[1]
    if gamma.shape[-1] != c or beta.shape[-1] != c:
        raise ValueError(
            f"style has {gamma.shape[-1]} channels, content has {c}")
    mean = content.mean(dim=(2, 3), keepdim=True)
    var = content.var(dim=(2, 3), unbiased=False, keepdim=True)
    normalized = (content - mean) / torch.sqrt(var + eps)
    g = gamma.reshape(-1, c, 1, 1)
    bta = beta.reshape(-1, c, 1, 1)
    if g.shape[0] not in (1, b):
        raise ValueError(f"gamma batch {g.shape[0]} incompatible with content batch {b}")
    return normalized * g + bta


def _to_signed(x: torch.Tensor) -> torch.Tensor:
    """[0,1] image contract -> [-1,1] internal range."""
    return x * 2.0 - 1.0


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = min(8, channels)
    while channels % groups:
        groups -= 1
    return nn.GroupNorm(groups, channels)


class ResBlock(nn.Module):
    """3x3-norm-relu-3x3-norm residual block; norm picked by kind."""

    def __init__(self, channels: int, norm: str):
        super().__init__()
        def make_norm():
            if norm == "group":
                return _group_norm(channels)
            if norm == "instance":
                return nn.InstanceNorm2d(channels, affine=True)
            raise ValueError(f"unknown norm kind {norm!r}")
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.norm1 = make_norm()
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.norm2 = make_norm()

    def forward(self, x):
        h = torch.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return torch.relu(x + h)


class AdaInResBlock(nn.Module):
    """Residual block whose two norms are style-conditioned AdaIN sites.

    Each site owns one affine map from the style vector to per-channel
    (gamma, beta); gamma is parameterized as 1 + delta so an untrained
    block starts near plain instance normalization.
    """

    def __init__(self, channels: int, style_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.style1 = nn.Linear(style_dim, 2 * channels)
        self.style2 = nn.Linear(style_dim, 2 * channels)

    def forward(self, x, style):
        d1, b1 = self.style1(style).chunk(2, dim=-1)
        h = torch.relu(adaptive_instance_norm(self.conv1(x), 1.0 + d1, b1))
        d2, b2 = self.style2(style).chunk(2, dim=-1)
        h = adaptive_instance_norm(self.conv2(h), 1.0 + d2, b2)
        return x + h


class VisionEncoder(nn.Module):
    """Image -> feature vector; desk profile is a small GroupNorm conv
    net, paper profile the torchvision 50-layer residual backbone."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.resolution = config.resolution
        if config.scale_profile == "paper":
            import torchvision.models as tvm
            weights = tvm.ResNet50_Weights.IMAGENET1K_V1 if config.vision_pretrained else None
            backbone = tvm.resnet50(weights=weights)
            backbone.fc = nn.Identity()
            self.net = backbone
            self._paper = True
        else:
            base = config.base_channels
            self.net = nn.Sequential(
                nn.Conv2d(3, base, 7, 1, 3), _group_norm(base), nn.ReLU(inplace=False),
                nn.Conv2d(base, 2 * base, 4, 2, 1), _group_norm(2 * base), nn.ReLU(),
                ResBlock(2 * base, "group"),
                nn.Conv2d(2 * base, 4 * base, 4, 2, 1), _group_norm(4 * base), nn.ReLU(),
                ResBlock(4 * base, "group"),
                nn.Conv2d(4 * base, config.feat_dim, 3, 1, 1), nn.ReLU(),
                nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            )
            self._paper = False

    def forward(self, x):
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise ValueError(
                f"expected {self.resolution}x{self.resolution} input, got {tuple(x.shape)}")
        return self.net(_to_signed(x))


class AttributeEncoder(nn.Module):
    """(attribute, noise) -> feature vector through two affine layers;
    final ReLU keeps the range compatible with the vision features."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.attr_dim = config.attr_dim
        self.noise_dim = config.noise_dim
        self.fc1 = nn.Linear(config.attr_dim + config.noise_dim, config.mlp_hidden)
        self.fc2 = nn.Linear(config.mlp_hidden, config.feat_dim)

    def forward(self, attr, noise):
        if attr.shape[-1] != self.attr_dim:
            raise ValueError(f"attribute dim {attr.shape[-1]} != configured {self.attr_dim}")
        if noise.shape[-1] != self.noise_dim:
            raise ValueError(f"noise dim {noise.shape[-1]} != configured {self.noise_dim}")
        h = torch.nn.functional.leaky_relu(self.fc1(torch.cat([attr, noise], dim=-1)), 0.2)
        return torch.relu(self.fc2(h))


class Classifier(nn.Module):
    """One affine layer from feature space to seen-class logits."""

    def __init__(self, config: NetConfig):
        super().__init__()
        if config.n_seen_classes is None:
            raise ValueError("n_seen_classes must be set before building the classifier")
        self.fc = nn.Linear(config.feat_dim, config.n_seen_classes)

    def forward(self, feat):
        return self.fc(feat)

    def forward_frozen(self, feat):
        """Logits through detached weights: gradients reach the feature
        argument but never the classifier parameters.  Used when the
        encoders train through the classifier without moving it."""
        return torch.nn.functional.linear(
            feat, self.fc.weight.detach(), self.fc.bias.detach())


class FeatureCritic(nn.Module):
    """(feature, attribute) -> scalar score; conditioning by concatenation."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.fc1 = nn.Linear(config.feat_dim + config.attr_dim, config.mlp_hidden)
        self.fc2 = nn.Linear(config.mlp_hidden, 1)

    def forward(self, feat, attr):
        h = torch.nn.functional.leaky_relu(self.fc1(torch.cat([feat, attr], dim=-1)), 0.2)
        return self.fc2(h).squeeze(-1)


class ImageCritic(nn.Module):
    """Patch critic: shared stride-2 conv trunk, then a critic-map head
    and a feature-prediction head.  No normalization anywhere (penalty
    term already controls the critic's gradients)."""

    def __init__(self, config: NetConfig):
        super().__init__()
        base = config.base_channels
        layers: list[nn.Module] = []
        in_ch = 3
        for i in range(config.critic_downsamples):
            out_ch = min(base * 2 ** i, base * 8)
            layers += [nn.Conv2d(in_ch, out_ch, 4, 2, 1), nn.LeakyReLU(0.2)]
            in_ch = out_ch
        self.trunk = nn.Sequential(*layers)
        trunk_spatial = config.resolution // (2 ** config.critic_downsamples)
        self.critic_head = nn.Conv2d(in_ch, 1, 3, 1, 1)
        self.feature_head = nn.Conv2d(in_ch, config.feat_dim, trunk_spatial)

    def forward(self, x):
        h = self.trunk(_to_signed(x))
        critic_map = self.critic_head(h)
        feat = self.feature_head(h).flatten(1)
        return critic_map, feat

    def critic_score(self, x):
        return self.forward(x)[0]

    def predict_feature(self, x):
        return self.forward(x)[1]


class ContentEncoder(nn.Module):
    """Image -> spatial content map: 7x7 stem, two stride-2 convs, then
    instance-normalized residual blocks."""

    def __init__(self, config: NetConfig):
        super().__init__()
        base = config.base_channels
        blocks = [ResBlock(4 * base, "instance") for _ in range(config.content_blocks)]
        self.net = nn.Sequential(
            nn.Conv2d(3, base, 7, 1, 3), nn.InstanceNorm2d(base, affine=True), nn.ReLU(),
            nn.Conv2d(base, 2 * base, 4, 2, 1), nn.InstanceNorm2d(2 * base, affine=True), nn.ReLU(),
            nn.Conv2d(2 * base, 4 * base, 4, 2, 1), nn.InstanceNorm2d(4 * base, affine=True), nn.ReLU(),
            *blocks,
        )
        self.out_channels = 4 * base

    def forward(self, x):
        return self.net(_to_signed(x))


class Generator(nn.Module):
    """(content map, style feature) -> image.  Style enters through the
    AdaIN sites of every residual block; two 5x5 stride-2 deconvolutions
    upsample back to full resolution; sigmoid keeps the output in [0, 1].
    """

    def __init__(self, config: NetConfig):
        super().__init__()
        base = config.base_channels
        ch = 4 * base
        self.blocks = nn.ModuleList(
            AdaInResBlock(ch, config.feat_dim) for _ in range(config.content_blocks))
        self.up1 = nn.ConvTranspose2d(ch, 2 * base, 5, 2, padding=2, output_padding=1)
        self.up2 = nn.ConvTranspose2d(2 * base, base, 5, 2, padding=2, output_padding=1)
        self.out_conv = nn.Conv2d(base, 3, 7, 1, 3)

    def forward(self, content, style):
        h = content
        for block in self.blocks:
            h = block(h, style)
        h = torch.relu(self.up1(h))
        h = torch.relu(self.up2(h))
        return torch.sigmoid(self.out_conv(h))


@dataclass
class ModelBundle:
    """All networks of one model plus their optimizers."""

    config: NetConfig
    vision_enc: VisionEncoder
    attr_enc: AttributeEncoder
    content_enc: ContentEncoder
    generator: Generator
    classifier: Classifier
    feat_critic: FeatureCritic
    img_critic: ImageCritic
    optimizers: dict[str, torch.optim.Adam] = field(default_factory=dict)

    def networks(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def train_mode(self) -> None:
        for net in self.networks().values():
            net.train()

    def eval_mode(self) -> None:
        for net in self.networks().values():
            net.eval()


def build_bundle(config: NetConfig, rng_seed: int, lr: float = 1e-4) -> ModelBundle:
    """Construct all seven networks with seeded initialization and one
    Adam optimizer per network.  Building twice with the same arguments
    yields bit-identical parameters."""
    config.validate()
    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        nets = {
            "vision_enc": VisionEncoder(config),
            "attr_enc": AttributeEncoder(config),
            "content_enc": ContentEncoder(config),
            "generator": Generator(config),
            "classifier": Classifier(config),
            "feat_critic": FeatureCritic(config),
            "img_critic": ImageCritic(config),
        }
    optimizers = {name: torch.optim.Adam(net.parameters(), lr=lr, betas=ADAM_BETAS)
                  for name, net in nets.items()}
    return ModelBundle(config=config, optimizers=optimizers, **nets)


def translate_vision(bundle: ModelBundle, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
    """Translate x1's content into x2's domain, style read from the image."""
    _check_resolution(bundle.config, x1, "x1")
    _check_resolution(bundle.config, x2, "x2")
    return bundle.generator(bundle.content_enc(x1), bundle.vision_enc(x2))


def translate_attr(bundle: ModelBundle, x1: torch.Tensor, a2: torch.Tensor,
                   z: torch.Tensor) -> torch.Tensor:
    """Translate x1's content into the domain described by attribute a2."""
    _check_resolution(bundle.config, x1, "x1")
    return bundle.generator(bundle.content_enc(x1), bundle.attr_enc(a2, z))


def interpolate_styles(bundle: ModelBundle, x1: torch.Tensor, style_a: torch.Tensor,
                       style_b: torch.Tensor, steps: int) -> torch.Tensor:
    """Decode x1's content under styles linearly interpolated from
    style_a to style_b (inclusive endpoints).  Returns (steps, ...) images."""
    if steps < 2:
        raise ValueError("need at least 2 interpolation steps")
    _check_resolution(bundle.config, x1, "x1")
    content = bundle.content_enc(x1)
    frames = []
    for i in range(steps):
        t = i / (steps - 1)
        style = (1.0 - t) * style_a + t * style_b
        frames.append(bundle.generator(content, style))
    return torch.cat(frames, dim=0)


def _check_resolution(config: NetConfig, x: torch.Tensor, name: str) -> None:
    if x.dim() != 4 or x.shape[1] != 3 or x.shape[-1] != config.resolution \
            or x.shape[-2] != config.resolution:
        raise ValueError(
            f"{name}: expected (B, 3, {config.resolution}, {config.resolution}), "
            f"got {tuple(x.shape)}")


def parameter_counts(bundle: ModelBundle) -> dict[str, int]:
    return {name: sum(p.numel() for p in net.parameters())
            for name, net in bundle.networks().items()}


def parameter_digest(bundle: ModelBundle) -> dict[str, str]:
    """Per-network sha256 over parameter and buffer bytes, in state-dict
    order.  Detects any weight movement, used by update-isolation tests."""
    out = {}
    for name, net in bundle.networks().items():
        h = hashlib.sha256()
        for key, tensor in net.state_dict().items():
            h.update(key.encode())
            h.update(tensor.detach().cpu().to(torch.float32).numpy().tobytes())
        out[name] = h.hexdigest()
    return out
