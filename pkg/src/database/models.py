from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class TrainRun(Base):
    """Model for one training run (either stage)."""
    __tablename__ = 'train_runs'

    id = Column(Integer, primary_key=True)
    uid = Column(String(64), unique=True, index=True)
    stage = Column(String(32), index=True)
    strategy = Column(String(64), index=True)
    seed = Column(Integer)
    wall_time = Column(Float, default=0.0)
    final_loss = Column(Float, nullable=True)
    clip_events = Column(Integer, default=0)
    checkpoint = Column(Text, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)

    steps = relationship("TrainStepRow", back_populates="run", cascade="all, delete-orphan", order_by="TrainStepRow.step")

    def __repr__(self):
        return f"<TrainRun(uid='{self.uid}', stage='{self.stage}', strategy='{self.strategy}', seed={self.seed})>"


class TrainStepRow(Base):
    """Model for one logged optimizer step."""
    __tablename__ = 'train_steps'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('train_runs.id', ondelete='CASCADE'), index=True)
    step = Column(Integer)
    lr = Column(Float)
    total = Column(Float)
    terms = Column(Text)  # JSON object of loss terms

    run = relationship("TrainRun", back_populates="steps")

    def __repr__(self):
        return f"<TrainStepRow(run_id={self.run_id}, step={self.step}, total={self.total})>"


class MetricRow(Base):
    """Model for per-image evaluation scores."""
    __tablename__ = 'metrics'

    id = Column(Integer, primary_key=True)
    run_uid = Column(String(64), index=True)
    image_id = Column(String(255))
    psnr = Column(Float)
    ssim = Column(Float)
    created_at = Column(DateTime, default=datetime.utcnow)

    def __repr__(self):
        return f"<MetricRow(run='{self.run_uid}', image='{self.image_id}', psnr={self.psnr})>"
