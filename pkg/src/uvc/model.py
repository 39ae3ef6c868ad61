"""The trainable network bundle shared by training and the codec pipeline."""

from dataclasses import replace

import torch.nn as nn

from .edge import GED, EdgeNet, ProjectionHead, SobelEdge
from .enc_net import EncNet, EncNetConfig
from .entropy import FactorizedEntropyModel
from .r_net import RNet, RNetConfig


class UVCModel(nn.Module):
    """Enc-Net, entropy model, R-Net and the edge-side networks."""

    def __init__(self, enc_config=None, rnet_config=None, edge_channels=32, edge_extractor="learned"):
        super().__init__()
        enc_config = enc_config or EncNetConfig()
        rnet_config = replace(rnet_config or RNetConfig(), analytic_channels=enc_config.analytic_channels)
        self.enc = EncNet(enc_config)
        self.entropy = FactorizedEntropyModel(enc_config.analytic_channels)
        self.rnet = RNet(rnet_config)
        edge_net = EdgeNet(edge_channels) if edge_extractor == "learned" else SobelEdge()
        self.ged = GED(edge_net)
        self.head = ProjectionHead()

    @property
    def edge_net(self):
        return self.ged.edge_net

    def analyze(self, x, x_dec):
        """Analytic feature S from the clip and its decoded version."""
        return self.enc(x, x - x_dec)

    def restore(self, x_dec, s_hat=None):
        return self.rnet(x_dec, s_hat)

    def codec_parameters(self):
        return [p for m in (self.enc, self.entropy, self.rnet) for p in m.parameters()]

    def edge_parameters(self):
        return [p for m in (self.ged, self.head) for p in m.parameters()]

    def analytic_shape(self, t, h, w):
        return (self.enc.config.analytic_channels, t, h // 16, w // 16)
