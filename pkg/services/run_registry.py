"""
Run ledger: one row per CLI run plus its headline scores
"""

import datetime
import logging
from typing import Dict, List, Optional

from sqlalchemy.engine import Engine

from database.db_manager import get_engine, session_scope
from models.run_records import RunRecord, ScoreRecord
from services.metrics import ScoreTriple

logger = logging.getLogger("run_registry")


class RunRegistry:
    """Records runs and scores in the ledger database"""

    def __init__(self, url: str = None, engine: Engine = None):
        self.engine = engine or get_engine(url)

    def start_run(self, command: str, config_digest: str, out_dir: str, dataset: Optional[str] = None) -> int:
        with session_scope(self.engine) as session:
            run = RunRecord(command=command, config_digest=config_digest, out_dir=out_dir, dataset=dataset)
            session.add(run)
            session.flush()
            run_id = run.id
        logger.debug(f"Started run {run_id} ({command})")
        return run_id

    def finish_run(self, run_id: int, exit_code: int, message: str = None) -> None:
        with session_scope(self.engine) as session:
            run = session.get(RunRecord, run_id)
            if run is None:
                logger.warning(f"Run {run_id} is not in the ledger")
                return
            run.exit_code = exit_code
            run.status = "succeeded" if exit_code == 0 else "failed"
            run.message = message
            run.finished_at = datetime.datetime.utcnow()

    def record_score(
        self,
        run_id: int,
        scope: str,
        scores: ScoreTriple,
        member_count: Optional[int] = None,
        threshold: Optional[float] = None,
    ) -> None:
        with session_scope(self.engine) as session:
            session.add(
                ScoreRecord(
                    run_id=run_id,
                    scope=scope,
                    member_count=member_count,
                    threshold=threshold,
                    precision=float(scores.precision),
                    recall=float(scores.recall),
                    f1=float(scores.f1),
                )
            )

    def list_runs(self, limit: int = 20) -> List[Dict]:
        """Most recent runs first, each with its scores"""
        with session_scope(self.engine) as session:
            runs = session.query(RunRecord).order_by(RunRecord.id.desc()).limit(limit).all()
            return [dict(run.to_dict(), scores=[s.to_dict() for s in run.scores]) for run in runs]
