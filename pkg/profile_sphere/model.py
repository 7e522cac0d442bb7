# model.py

"""
The fitted-model document shared by every command: configuration, corpus
fingerprint, embedding, sphere marginals and (after ordering) the curve.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple

from profile_sphere.config import PipelineConfig
from profile_sphere.curve import PrincipalCurve
from profile_sphere.embedding import EmbeddingModel
from profile_sphere.errors import ParameterError
from profile_sphere.generative import GeneratorModel
from profile_sphere.sphere import SphereModel


@dataclass(frozen=True, eq=False)
class FittedModel:
    """
    Everything `fit` produces and later commands consume.

    Attributes:
        config: Effective pipeline configuration
        fingerprint: Row count, column count and content hash of the training corpus
        resolution_minutes: Time-step length of the training profiles
        embedding: PCA model
        sphere: Sphere fit and marginal distributions
        curve: Principal curve, present after `order`
        excluded_ids: Meters left out of the curve fit (flagged outliers)
        summary: CEV table and spherical moment table
    """
    config: PipelineConfig
    fingerprint: Dict[str, Any]
    resolution_minutes: int
    embedding: EmbeddingModel
    sphere: SphereModel
    curve: Optional[PrincipalCurve] = None
    excluded_ids: Tuple[str, ...] = ()
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def has_curve(self) -> bool:
        return self.curve is not None

    def with_curve(self, curve: PrincipalCurve, excluded_ids: Sequence[str] = ()) -> 'FittedModel':
        return replace(self, curve=curve, excluded_ids=tuple(excluded_ids))

    def generator(self, kappa: Optional[float] = None) -> GeneratorModel:
        """
        Generator model on the fitted curve.

        Args:
            kappa: VMF concentration; defaults to the polar-angle von Mises kappa

        Raises:
            ParameterError: If no curve has been fitted yet
        """
        if self.curve is None:
            raise ParameterError("Model has no principal curve; run 'order' first")
        return GeneratorModel(
            curve=self.curve,
            kappa=self.sphere.polar.kappa if kappa is None else kappa,
            sphere=self.sphere.sphere,
            embedding=self.embedding,
            resolution_minutes=self.resolution_minutes,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config.to_dict(),
            'fingerprint': dict(self.fingerprint),
            'resolution_minutes': int(self.resolution_minutes),
            'embedding': self.embedding.to_dict(),
            'sphere': self.sphere.to_dict(),
            'curve': self.curve.to_dict() if self.curve is not None else None,
            'excluded_ids': list(self.excluded_ids),
            'summary': self.summary,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FittedModel':
        curve = data.get('curve')
        return cls(
            config=PipelineConfig.from_dict(data['config']),
            fingerprint=dict(data['fingerprint']),
            resolution_minutes=int(data['resolution_minutes']),
            embedding=EmbeddingModel.from_dict(data['embedding']),
            sphere=SphereModel.from_dict(data['sphere']),
            curve=PrincipalCurve.from_dict(curve) if curve is not None else None,
            excluded_ids=tuple(data.get('excluded_ids', ())),
            summary=data.get('summary', {}),
        )
