from typing import List

from pydantic import BaseModel, Field


class MetricReport(BaseModel):
    """SSIM and RMSE of one image against its reference"""
    ssim: float = Field(ge=-1.0, le=1.0)
    rmse: float = Field(ge=0.0)
    data_range: float = Field(gt=0.0)


class VolumeReport(BaseModel):
    """Per-image reports plus their mean"""
    images: List[MetricReport]
    mean: MetricReport

    @classmethod
    def from_images(cls, images: List[MetricReport]) -> "VolumeReport":
        if not images:
            raise ValueError("cannot aggregate an empty report list")
        count = len(images)
        mean = MetricReport(
            ssim=sum(r.ssim for r in images) / count,
            rmse=sum(r.rmse for r in images) / count,
            data_range=images[0].data_range,
        )
        return cls(images=images, mean=mean)
