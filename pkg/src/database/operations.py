import json
from typing import List, Optional

from loguru import logger
from sqlalchemy.orm import Session

from src.evaluator.report import MetricReport
from src.trainer.record import StepLog, TrainRunRecord

from .models import MetricRow, TrainRun, TrainStepRow


class RunOperations:
    """Class to handle run registry operations."""

    def __init__(self, session: Session):
        """Initialize with a database session."""
        self.session = session

    # --- Training Run Operations ---

    def save_train_record(self, record: TrainRunRecord) -> TrainRun:
        """Save a training run and all of its logged steps."""
        try:
            existing_run = self.session.query(TrainRun).filter_by(uid=record.run_uid).first()
            if existing_run:
                logger.debug(f"Run {record.run_uid} already exists in registry")
                return existing_run

            run = TrainRun(
                uid=record.run_uid,
                stage=record.stage,
                strategy=record.strategy,
                seed=record.seed,
                wall_time=record.wall_time,
                final_loss=record.final_loss,
                clip_events=record.clip_events,
                checkpoint=record.checkpoint,
            )
            run.steps = [
                TrainStepRow(step=s.step, lr=s.lr, total=s.total, terms=json.dumps(s.terms))
                for s in record.steps
            ]
            self.session.add(run)
            self.session.commit()
            logger.debug(f"Saved run {record.run_uid} with {len(record.steps)} steps")
            return run

        except Exception as e:
            self.session.rollback()
            logger.error(f"Error saving training run: {str(e)}")
            raise

    def load_train_record(self, uid: str) -> Optional[TrainRunRecord]:
        """Rebuild a run record from the registry."""
        run = self.session.query(TrainRun).filter_by(uid=uid).first()
        if not run:
            return None
        record = TrainRunRecord(
            stage=run.stage,
            strategy=run.strategy,
            seed=run.seed,
            wall_time=run.wall_time,
            clip_events=run.clip_events,
            checkpoint=run.checkpoint,
            run_uid=run.uid,
        )
        record.steps = [StepLog(row.step, row.lr, row.total, json.loads(row.terms)) for row in run.steps]
        return record

    def list_runs(self, stage: Optional[str] = None, strategy: Optional[str] = None) -> List[TrainRun]:
        """Get runs, newest first, optionally filtered by stage and strategy."""
        query = self.session.query(TrainRun).order_by(TrainRun.created_at.desc(), TrainRun.id.desc())

        if stage:
            query = query.filter(TrainRun.stage == stage)

        if strategy:
            query = query.filter(TrainRun.strategy == strategy)

        return query.all()

    # --- Metric Operations ---

    def save_metric_report(self, run_uid: str, report: MetricReport) -> int:
        """Save per-image scores of an evaluation report."""
        try:
            rows = [MetricRow(run_uid=run_uid, image_id=r.image_id, psnr=r.psnr, ssim=r.ssim) for r in report.records]
            self.session.add_all(rows)
            self.session.commit()
            return len(rows)

        except Exception as e:
            self.session.rollback()
            logger.error(f"Error saving metric report: {str(e)}")
            raise

    def get_metrics(self, run_uid: str) -> List[MetricRow]:
        return self.session.query(MetricRow).filter_by(run_uid=run_uid).order_by(MetricRow.id).all()
