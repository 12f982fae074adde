# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

from datetime import datetime
import logging
import statistics

from sqlalchemy.orm import sessionmaker

from guidir.models import Base, EvaluationReport, GlobalStats, ImageResult

logger = logging.getLogger(__name__)


def create_schema(engine):
    Base.metadata.create_all(engine)


def store_report(engine, rows, report_type, restored_dir, reference_dir,
                 run_config=None):
    """
    Store an evaluation in the DB: the report record, one ImageResult per
    (path, psnr, ssim) row and the global statistics. Returns the report id.

    """
    Session = sessionmaker(engine)
    session = Session()

    # Create report record
    report_db = EvaluationReport(
        restored_dir=restored_dir,
        reference_dir=reference_dir,
        date_finished=datetime.now(),
        type=report_type,
        run_config=run_config)
    session.add(report_db)
    session.commit()

    # Create records for the results
    results_db = [ImageResult(path=path, report_id=report_db.id, psnr=psnr,
                              ssim=ssim)
                  for path, psnr, ssim in rows]
    session.add_all(results_db)
    session.commit()

    # Calculate statistics for this report
    kwargs = {'report_id': report_db.id, 'count': len(results_db)}
    statistic_calculations = GlobalStats.get_statistics_calculations()
    for metric, calculations in statistic_calculations.items():
        for calc in calculations:
            key = "{}_{}".format(metric, calc)
            kwargs[key] = getattr(statistics, calc)(
                [getattr(x, metric)
                 for x in results_db
                 if getattr(x, metric) is not None])
    session.add(GlobalStats(**kwargs))
    session.commit()
    report_id = report_db.id
    session.close()
    logger.info("Stored report {} ({} images)".format(report_id,
                                                      len(results_db)))
    return report_id
