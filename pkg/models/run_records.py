import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

# Declarative base for the run ledger tables
Base = declarative_base()


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, index=True)
    dataset = Column(String, nullable=True)
    config_digest = Column(String)
    out_dir = Column(String)
    status = Column(String, default="running")
    exit_code = Column(Integer, nullable=True)
    message = Column(Text, nullable=True)
    started_at = Column(DateTime, default=datetime.datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)

    scores = relationship("ScoreRecord", back_populates="run", cascade="all, delete-orphan")

    def to_dict(self):
        """Convert run record to dictionary"""
        return {
            "id": self.id,
            "command": self.command,
            "dataset": self.dataset,
            "config_digest": self.config_digest,
            "out_dir": self.out_dir,
            "status": self.status,
            "exit_code": self.exit_code,
            "message": self.message,
            "started_at": self.started_at.strftime("%Y-%m-%d %H:%M:%S") if self.started_at else None,
            "finished_at": self.finished_at.strftime("%Y-%m-%d %H:%M:%S") if self.finished_at else None,
        }


class ScoreRecord(Base):
    __tablename__ = "scores"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.id"), index=True)
    scope = Column(String)
    member_count = Column(Integer, nullable=True)
    threshold = Column(Float, nullable=True)
    precision = Column(Float)
    recall = Column(Float)
    f1 = Column(Float)

    run = relationship("RunRecord", back_populates="scores")

    def to_dict(self):
        return {
            "id": self.id,
            "run_id": self.run_id,
            "scope": self.scope,
            "member_count": self.member_count,
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }
