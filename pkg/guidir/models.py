# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import enum

from sqlalchemy import Column, ForeignKey
from sqlalchemy import Integer, String, DateTime, Enum, Float, JSON
from sqlalchemy.orm import declarative_base, relationship
from sqlalchemy.schema import ForeignKeyConstraint

Base = declarative_base()


class ImageResult(Base):
    __tablename__ = 'image_results'

    path = Column(String, primary_key=True)
    report_id = Column(Integer, ForeignKey('reports.id'), primary_key=True)
    psnr = Column(Float)
    ssim = Column(Float)

    report = relationship("EvaluationReport", back_populates="results")


class ReportType(enum.Enum):
    evaluate = 1


class EvaluationReport(Base):
    __tablename__ = 'reports'

    id = Column(Integer, primary_key=True)
    restored_dir = Column(String)
    reference_dir = Column(String)
    date_finished = Column(DateTime)
    type = Column(Enum(ReportType))
    run_config = Column(JSON)

    results = relationship("ImageResult",
                           order_by=ImageResult.path,
                           back_populates="report")
    stats = relationship("GlobalStats",
                         back_populates="report")


class GlobalStats(Base):
    __tablename__ = 'global_stats'

    report_id = Column(Integer, primary_key=True)
    count = Column(Integer)
    psnr_mean = Column(Float)
    psnr_median = Column(Float)
    ssim_mean = Column(Float)
    ssim_median = Column(Float)

    report = relationship("EvaluationReport", back_populates="stats")

    __table_args__ = (ForeignKeyConstraint(('report_id', ),
                                           [EvaluationReport.id]),)

    @classmethod
    def get_statistics_calculations(cls):
        return {
            'psnr': ['mean', 'median'],
            'ssim': ['mean', 'median'],
        }
